import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial import Delaunay

from haptic_manip import control, datagen, dynamics, handsim, percept
from haptic_manip.control import ControlModels, MpcParams
from haptic_manip.errors import ConfigError, PlanTimeout
from haptic_manip.handsim import Pose
from haptic_manip.percept import CriticModel, ObservationModel
from haptic_manip.regress import FCSpec, GPSpec, RegressorSpec, TrainSpec

from rigs import affine, constant

TINY_FC = RegressorSpec(kind="fc_nn", fc=FCSpec(width=16, layers=2), train=TrainSpec(max_epochs=2))
GP = RegressorSpec(kind="local_gp", gp=GPSpec(neighbors=30))
COMB3 = datagen.combination(3)


def passthrough():
    return ObservationModel(affine(np.eye(4), np.zeros(4)), COMB3)


def critic_const(value):
    return CriticModel(constant(4, [value]), COMB3)


def state_at(x, y, yaw=0.0):
    return percept.encode_pose(Pose(x, y, yaw))


@pytest.fixture(scope="module")
def models(small_data):
    obs = percept.train_observation(small_data, 7, GP)
    critic = percept.train_critic(obs, small_data, percept.CRITIC_SPEC.replace(train={"max_epochs": 3}))
    trans = dynamics.train_transition(small_data, 7, TINY_FC)
    vis = dynamics.train_transition(small_data, dynamics.VIS_STATE, TINY_FC)
    return ControlModels(obs, critic, trans, vis, control.mean_initial_history(small_data, trans))


# --- servo -----------------------------------------------------------------------------

@given(x=st.floats(-50, 50), y=st.floats(0, 100))
def test_servo_fixpoint(x, y):
    assert np.array_equal(control.servo_command((x, y), (x, y)), [0.5, 0.5])


def test_servo_example():
    u = control.servo_command((0.0, 0.0), (2.0, 2.0), 200.0, 200.0)
    assert u[0] == pytest.approx(0.5 + 0.02 / 2, abs=1e-15)
    assert u[1] == 0.5


def test_servo_saturates_and_validates():
    assert np.array_equal(control.servo_command((0, 0), (0, 1e6)), [1.0, 1.0])
    with pytest.raises(ConfigError):
        control.servo_command((0, 0), (1, 1), kx=0.0)


def test_haptic_servo_uses_estimate():
    u = control.haptic_servo_step(passthrough(), state_at(0.0, 0.0), (2.0, 2.0))
    assert np.allclose(u, [0.51, 0.5], atol=1e-12)


# --- path cost -------------------------------------------------------------------------

def test_path_cost_examples():
    goal = (5.0, 60.0)
    assert control.path_cost(state_at(*goal), passthrough(), critic_const(0.0), goal, 0.8, 0.2) == 0.0
    path = [state_at(6.0, 60.0), state_at(5.0, 62.0, 1.0)]
    assert control.path_cost(path, passthrough(), None, goal, 0.8, 0.0) == pytest.approx(0.8 * 5, abs=1e-12)
    for g in [(0, 0), (100, -3)]:
        assert control.path_cost(path, passthrough(), critic_const(0.7), g, 0.0, 0.2) == pytest.approx(0.2 * 1.4)


def test_path_cost_vis_state():
    paths = np.array([[[1.0, 2.0, 0.3, 9.0, 9.0], [1.0, 4.0, 0.0, 0.0, 0.0]]])
    assert control.path_costs(paths, None, None, (1.0, 2.0), 1.0, 0.0)[0] == pytest.approx(4.0)


# --- mpc_step --------------------------------------------------------------------------

def test_single_sample_returns_its_first_action(models):
    p = MpcParams(horizon=4, samples=1)
    hist = np.zeros(6) + models.initial_history[-1]
    a, diag = control.mpc_step(models.trans, models.obs, models.critic, hist, (0, 200), p)
    assert np.array_equal(a, diag.sequences[0, 0]) and diag.sequences.shape == (1, 5, 2)


def test_grid_sampler_brute_force(models):
    p = MpcParams(horizon=2)
    hist = models.initial_history[-1] + 0.3
    goal = (4.0, 70.0)
    a, diag = control.mpc_step(models.trans, models.obs, models.critic, hist, goal, p,
                               sampler=control.grid_sampler(3))
    grid = [0.0, 0.5, 1.0]
    actions = list(itertools.product(grid, grid))
    best, best_seq = math.inf, None
    for seq in itertools.product(actions, repeat=3):
        x, cost = hist, 0.0
        for k in range(4):
            pose = percept.estimate_pose(models.obs, x)
            cost += p.w1 * ((pose.x - goal[0]) ** 2 + (pose.y - goal[1]) ** 2)
            cost += p.w2 * percept.critic_error(models.critic, x)
            if k < 3:
                x = dynamics.predict_next(models.trans, x, seq[k])
        if cost < best:
            best, best_seq = cost, seq
    assert len(diag.costs) == 729
    assert tuple(a) == best_seq[0]
    assert diag.costs[diag.index] == pytest.approx(best, rel=1e-9)


@given(c=st.floats(0.01, 100), seed=st.integers(0, 50))
def test_cost_scaling_invariance(models, c, seed):
    hist = models.initial_history[-1]
    base = MpcParams(horizon=3, samples=20, seed=seed)
    scaled = MpcParams(horizon=3, samples=20, seed=seed, w1=0.8 * c, w2=0.2 * c)
    a, d1 = control.mpc_step(models.trans, models.obs, models.critic, hist, (3, 70), base)
    b, d2 = control.mpc_step(models.trans, models.obs, models.critic, hist, (3, 70), scaled)
    if np.sort(d1.costs)[1] - d1.costs.min() > 1e-9 * d1.costs.min():
        assert np.array_equal(a, b)


def test_mpc_params_validation():
    for kw in [{"horizon": 0}, {"samples": 0}, {"w1": -1.0}, {"tolerance": 0.0}]:
        with pytest.raises(ConfigError):
            MpcParams(**kw)


# --- open-loop planning ----------------------------------------------------------------

def test_plan_goal_at_start_is_empty(models):
    start = percept.estimate_pose(models.obs, models.initial_history[-1])
    plan = control.plan_open_loop(models.trans, models.obs, models.critic, models.initial_history,
                                  (start.x, start.y), MpcParams(samples=10))
    assert plan.reached and len(plan.actions) == 0


def test_plan_timeout_and_determinism(models):
    p = MpcParams(samples=10, horizon=3, max_steps=4)
    far = (500.0, 500.0)
    a = control.plan_open_loop(models.trans, models.obs, models.critic, models.initial_history, far, p)
    b = control.plan_open_loop(models.trans, models.obs, models.critic, models.initial_history, far, p)
    assert not a.reached and a.actions.shape == (4, 2) and np.array_equal(a.actions, b.actions)
    with pytest.raises(PlanTimeout) as exc:
        control.plan_open_loop(models.trans, models.obs, models.critic, models.initial_history, far, p, strict=True)
    assert np.array_equal(exc.value.plan.actions, a.actions)


# --- roll-outs -------------------------------------------------------------------------

@pytest.mark.parametrize("method", ["VS", "MPC-Vis"])
def test_goal_at_start_is_immediate_success(models, method):
    s = handsim.grasp_reset(handsim.HandConfig(), handsim.OBJECTS["circ15"], 17)
    r = control.rollout(method, models, (s.pose.x, s.pose.y), 17, params=MpcParams(samples=10))
    assert r.success and r.outcome == "success" and r.steps == 0 and r.path_length < 4.0


def test_drop_is_failure(models):
    r = control.rollout("VS", models, (0.0, 400.0), 3, params=MpcParams(max_steps=5000))
    assert r.outcome == "dropped" and not r.success


def test_timeout(models):
    r = control.rollout("HS", models, (0.0, 400.0), 3, params=MpcParams(max_steps=3))
    assert r.outcome == "timeout" and r.steps == 3 and len(r.log) == 3


def test_rollout_log_and_unknown_method(models):
    r = control.rollout("MPC-Critic", models, (5.0, 75.0), 2, params=MpcParams(samples=10, max_steps=5))
    assert r.steps == len(r.log) <= 5
    assert set(r.log[0]) == {"t", "true", "est", "action", "cost"}
    with pytest.raises(ConfigError):
        control.rollout("PID", models, (0, 0), 0)


# --- benchmark -------------------------------------------------------------------------

def test_zero_goals_gives_header_only(tmp_path, models, small_data):
    b = control.benchmark(["VS", "HS"], 0, 0, models, small_data.poses())
    p = control.write_benchmark(b, tmp_path / "b.csv")
    assert p.read_text().splitlines() == [",".join(control.BENCH_HEADER)]


def test_benchmark_reproducible_and_fair(tmp_path, models, small_data):
    p = MpcParams(samples=10, horizon=3, max_steps=30)
    runs = [control.benchmark(["VS", "HS", "MPC"], 3, 5, models, small_data.poses(), params=p) for _ in range(2)]
    texts = [control.write_benchmark(b, tmp_path / f"{i}.csv").read_bytes() for i, b in enumerate(runs)]
    assert texts[0] == texts[1]
    res = runs[0].results
    for i in range(3):
        assert len({res[m][i].goal for m in res}) == 1
        assert len({tuple(res[m][i].log[0]["true"]) for m in res if res[m][i].log}) <= 1
    assert runs[0].row("VS").n_goals == 3


def test_goals_inside_shrunk_hull(small_data):
    hull = control.workspace_hull(small_data.poses())
    goals = control.sample_goals(hull, 50, np.random.default_rng(0))
    assert np.all(Delaunay(hull).find_simplex(goals) >= 0)
    full = control.workspace_hull(small_data.poses(), shrink=0.0)
    assert np.all(Delaunay(full).find_simplex(hull) >= 0)


def test_write_traces(tmp_path, models, small_data):
    b = control.benchmark(["VS"], 2, 1, models, small_data.poses(), params=MpcParams(max_steps=10))
    d = control.write_traces(b, tmp_path / "traces")
    assert sorted(f.name for f in d.iterdir()) == ["VS_000.json", "VS_001.json"]
