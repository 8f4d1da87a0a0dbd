import numpy as np
import pytest
from hypothesis import given, strategies as st

from haptic_manip import datagen, dynamics, percept
from haptic_manip.dynamics import TransitionModel
from haptic_manip.errors import DimensionMismatch
from haptic_manip.regress import FCSpec, GPSpec, LSTMSpec, RegressorSpec, TrainSpec

from rigs import constant, dense_gp, identity_norm, synthetic

TINY_FC = RegressorSpec(kind="fc_nn", fc=FCSpec(width=16, layers=2), train=TrainSpec(max_epochs=2))
TINY_LSTM = RegressorSpec(kind="lstm", lstm=LSTMSpec(hidden=8, head_width=8), train=TrainSpec(max_epochs=1))


def rigged(delta, state=7, std=None):
    """Transition model whose regressor always outputs ``delta`` (normalized units)."""
    comb = datagen.combination(state)
    d = comb.dim
    norm = identity_norm(d) if std is None else datagen.Normalizer(np.zeros(d), np.asarray(std, dtype=float))
    return TransitionModel(constant(d + 2, np.broadcast_to(delta, (d,))), comb, 0, norm)


# --- training shapes -------------------------------------------------------------------

def test_fc_comb7_dimensions(small_data):
    m = dynamics.train_transition(small_data, 7, TINY_FC)
    assert (m.regressor.d_in, m.regressor.d_out) == (8, 6)
    assert m.history_len == 1 and m.dim == 6


def test_lstm_history_window(small_data):
    m = dynamics.train_transition(small_data, 7, TINY_LSTM, past_states=2)
    assert m.history_len == 3 and m.past_states == 2
    assert m.regressor.d_in == 8
    nxt = dynamics.predict_next(m, np.zeros((3, 6)), (0.5, 0.5))
    assert nxt.shape == (6,)
    with pytest.raises(DimensionMismatch):
        dynamics.predict_next(m, np.zeros((2, 6)), (0.5, 0.5))


def test_pairs_never_cross_episodes():
    data = synthetic(2, per=10)
    H, A, X, Xn, prov = dynamics.transition_pairs(data, 7)
    assert len(X) == 18
    assert all(t < 9 for _, t in prov)
    recs = data.records
    for k, (e, t) in enumerate(prov):
        i = e * 10 + t
        assert np.array_equal(X[k], datagen.extract_features(recs[i], 7))
        assert np.array_equal(Xn[k], datagen.extract_features(recs[i + 1], 7))
        assert np.array_equal(A[k], recs[i].action)


def test_deltas_learned_in_normalized_space():
    data = synthetic(3, per=30, seed=2)
    spec = RegressorSpec(kind="local_gp", gp=GPSpec(noise=0.0))
    m = dynamics.train_transition(data, 7, spec)
    _, A, X, Xn, _ = dynamics.transition_pairs(data, 7)
    pred = np.array([dynamics.predict_next(m, x, a) for x, a in zip(X, A)])
    assert np.max(np.abs(pred - Xn)) < 1e-6


# --- predict_next ----------------------------------------------------------------------

@given(seed=st.integers(0, 1000))
def test_zero_and_constant_rigs(seed):
    rng = np.random.default_rng(seed)
    x, a = rng.normal(size=6) * 10, rng.uniform(0, 1, 2)
    assert np.array_equal(dynamics.predict_next(rigged(0.0), x, a), x)
    delta = rng.normal(size=6)
    assert np.allclose(dynamics.predict_next(rigged(delta), x, a), x + delta, atol=1e-12, rtol=0)
    std = rng.uniform(0.5, 2, 6)
    assert np.allclose(dynamics.predict_next(rigged(delta, std=std), x, a), x + delta * std, atol=1e-12, rtol=0)


def test_gp_transition_dense_oracle():
    data = synthetic(1, per=4, seed=6)  # 3 training pairs
    gp = GPSpec(lengthscale=2.0, noise=0.1)
    m = dynamics.train_transition(data, 7, RegressorSpec(kind="local_gp", gp=gp))
    _, A, X, Xn, _ = dynamics.transition_pairs(data, 7)
    assert len(X) == 3
    reg = m.regressor
    inp = np.column_stack([X, A])
    norm = m.feature_norm
    dZ = norm.apply(Xn) - norm.apply(X)
    x, a = X[0] + 0.2, np.array([0.3, 0.8])
    q = reg.in_norm.apply(np.concatenate([x, a]))[None]
    mean = dense_gp(reg.in_norm.apply(inp), reg.out_norm.apply(dZ), q, gp.lengthscale, gp.signal, gp.noise)
    expect = x + reg.out_norm.invert(mean)[0] * norm.std
    assert np.max(np.abs(dynamics.predict_next(m, x, a) - expect)) < 1e-8


def test_initial_pose_block_is_frozen():
    data = synthetic(3, per=20, seed=1)
    m = dynamics.train_transition(data, 9, TINY_FC)
    x = datagen.extract_features(data.records[4], 9)
    path = dynamics.propagate(m, x, np.random.default_rng(0).uniform(0, 1, (5, 2)))
    assert np.all(path[:, -3:] == x[-3:])


# --- propagate -------------------------------------------------------------------------

def test_propagate_horizon_zero():
    x = np.arange(6.0)
    path = dynamics.propagate(rigged(1.0), x, np.zeros((0, 2)))
    assert path.shape == (1, 6) and np.array_equal(path[0], x)


@given(h=st.integers(0, 12), seed=st.integers(0, 100))
def test_propagate_length_and_zero_rig(h, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=6)
    path = dynamics.propagate(rigged(0.0), x, rng.uniform(0, 1, (h, 2)))
    assert path.shape == (h + 1, 6)
    assert np.all(path == x)


def test_propagate_composes_predict_next(small_data):
    for spec, L in [(TINY_FC, 1), (TINY_LSTM, 3)]:
        m = dynamics.train_transition(small_data, 7, spec)
        hist = datagen.feature_matrix(small_data.records[10:10 + L], 7)
        acts = np.array([[0.2, 0.9], [0.7, 0.1], [0.5, 0.5]])
        path = dynamics.propagate(m, hist, acts)
        h = hist.copy()
        for k, a in enumerate(acts):
            nxt = dynamics.predict_next(m, h, a)
            assert np.allclose(path[k + 1], nxt, atol=1e-12, rtol=0)
            h = np.vstack([h[1:], nxt])


def test_propagate_batch_matches_single(small_data):
    m = dynamics.train_transition(small_data, 7, TINY_FC)
    x = datagen.extract_features(small_data.records[3], 7)
    acts = np.random.default_rng(1).uniform(0, 1, (4, 5, 2))
    batch = dynamics.propagate_batch(m, x[None], acts)
    for i in range(4):
        assert np.allclose(batch[i], dynamics.propagate(m, x, acts[i]), atol=1e-12, rtol=0)


# --- evaluation ------------------------------------------------------------------------

def test_persistence_baseline_with_zero_rig(small_data):
    m = rigged(0.0)
    m.feature_norm = datagen.fit_normalizer(datagen.feature_matrix(small_data.records, 7))
    model_rmse, base = dynamics.eval_one_step(m, small_data)
    assert model_rmse == base


def test_open_loop_horizon_one_is_one_step(small_data):
    trans = dynamics.train_transition(small_data, 7, TINY_FC)
    obs = percept.train_observation(small_data, 7, RegressorSpec(kind="local_gp"))
    curve = dynamics.eval_open_loop(trans, obs, small_data, horizon=1, stride=1)
    assert curve.shape == (1, 2)
    # independent one-step evaluation over the same start indices
    recs = small_data.records
    errs = []
    for i in range(len(recs) - 1):
        if recs[i + 1].episode_id != recs[i].episode_id:
            continue
        x = datagen.extract_features(recs[i], 7)
        nxt = dynamics.predict_next(trans, x, recs[i].action)
        p = percept.estimate_pose(obs, nxt)
        t = recs[i + 1].sensor.truth_pose
        errs.append(np.hypot(p.x - t.x, p.y - t.y))
    assert curve[0, 0] == pytest.approx(np.mean(errs), rel=1e-12)


def test_open_loop_curve_shape_and_vis(small_data):
    trans = dynamics.train_transition(small_data, dynamics.VIS_STATE, TINY_FC)
    assert trans.dim == 5
    curve = dynamics.eval_open_loop(trans, None, small_data, horizon=20, stride=10)
    assert curve.shape == (20, 2) and np.all(curve >= 0)


# --- persistence and CSV ---------------------------------------------------------------

@pytest.mark.parametrize("state", [7, dynamics.VIS_STATE])
def test_save_load_transition(tmp_path, small_data, state):
    m = dynamics.train_transition(small_data, state, TINY_LSTM)
    dynamics.save_transition(m, tmp_path / "t.npz")
    back = dynamics.load_transition(tmp_path / "t.npz")
    assert back.history_len == m.history_len and back.state == m.state
    h = dynamics.state_matrix(small_data.records[:3], state)
    acts = np.random.default_rng(0).uniform(0, 1, (6, 2))
    assert np.array_equal(dynamics.propagate(back, h, acts), dynamics.propagate(m, h, acts))


def test_write_curve(tmp_path):
    p = dynamics.write_curve(np.array([[1.0, 2.0], [1.5, 2.5]]), tmp_path / "c.csv")
    assert p.read_text().splitlines() == ["step,pos_err_mm,ori_err_deg", "1,1.000000,2.000000", "2,1.500000,2.500000"]
