"""Learned delta-form transition model in feature space and its open-loop evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import datagen, percept, regress
from .datagen import EpisodeDataset, FeatureCombination, Normalizer, combination
from .errors import DimensionMismatch, EmptyData, SpecMismatch
from .regress import RegressorSpec, TrainedRegressor

VIS_STATE = "vis"  # (x, y, yaw, load1, load2): camera pose plus actuator loads
DEFAULT_PAST_STATES = 2


def state_matrix(records: Sequence, state) -> np.ndarray:
    if state == VIS_STATE:
        if not records:
            return np.zeros((0, 5))
        return np.array([[*r.sensor.truth_pose.as_array(), *r.sensor.loads] for r in records])
    return datagen.feature_matrix(records, state)


def state_dim(state) -> int:
    return 5 if state == VIS_STATE else combination(state).dim


def _frozen_dims(state) -> np.ndarray:
    """Boolean mask of dimensions held constant during propagation (the initial-pose block)."""
    mask = np.zeros(state_dim(state), dtype=bool)
    if state != VIS_STATE and combination(state).has_initial_pose:
        mask[-3:] = True
    return mask


@dataclass
class TransitionModel:
    regressor: TrainedRegressor
    state: Union[FeatureCombination, str]
    past_states: int  # k; history holds k + 1 states (LSTM), else 1
    feature_norm: Normalizer  # defines the normalized space the deltas live in

    @property
    def history_len(self) -> int:
        return self.regressor.window

    @property
    def dim(self) -> int:
        return state_dim(self.state)


def _histories(X: np.ndarray, episode_ids: Sequence[int], length: int) -> np.ndarray:
    """(n, length, d) oldest-first histories, padded with the episode's first state."""
    out = np.empty((len(X), length, X.shape[1]))
    start = 0
    for i in range(len(X)):
        if i == 0 or episode_ids[i] != episode_ids[i - 1]:
            start = i
        out[i] = X[np.maximum(np.arange(i - length + 1, i + 1), start)]
    return out


def _inputs(model_windowed: bool, hist: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Regressor inputs from (m, L, d) histories and (m, 2) actions."""
    if model_windowed:
        a = np.broadcast_to(actions[:, None, :], hist.shape[:2] + (2,))
        return np.concatenate([hist, a], axis=2)
    return np.concatenate([hist[:, -1], actions], axis=1)


def transition_pairs(data: EpisodeDataset, state, history_len: int = 1):
    """Histories, actions, next states and provenance (episode, t) for every in-episode pair."""
    recs = data.records
    X = state_matrix(recs, state)
    ids = [r.episode_id for r in recs]
    H = _histories(X, ids, history_len)
    keep = np.array([i + 1 < len(recs) and ids[i + 1] == ids[i] for i in range(len(recs))], dtype=bool)
    A = np.array([r.action for r in recs], dtype=float).reshape(-1, 2)
    nxt = np.roll(X, -1, axis=0)
    prov = [(r.episode_id, r.t) for r, k in zip(recs, keep) if k]
    return H[keep], A[keep], X[keep], nxt[keep], prov


def train_transition(data: EpisodeDataset, comb=7, spec: RegressorSpec = RegressorSpec(),
                     past_states: int = DEFAULT_PAST_STATES) -> TransitionModel:
    """Fit [history | action] -> normalized delta of the next state."""
    state = comb if comb == VIS_STATE else combination(comb)
    if past_states < 0:
        raise ValueError("past_states must be >= 0")
    if spec.windowed:
        spec = spec.replace(lstm={"window": past_states + 1})
    L = spec.window
    H, A, X, Xn, _ = transition_pairs(data, state, L)
    if len(X) == 0:
        raise EmptyData("no consecutive in-episode pairs to learn transitions from")
    norm = datagen.fit_normalizer(state_matrix(data.records, state))
    dZ = norm.apply(Xn) - norm.apply(X)
    dZ[:, _frozen_dims(state)] = 0.0
    reg = regress.fit(spec, _inputs(spec.windowed, H, A), dZ)
    return TransitionModel(reg, state, past_states if spec.windowed else 0, norm)


def _step_batch(model: TransitionModel, hist: np.ndarray, actions: np.ndarray) -> np.ndarray:
    dz = regress.predict(model.regressor, _inputs(model.regressor.spec.windowed, hist, actions))
    dz = np.where(_frozen_dims(model.state), 0.0, dz)
    return hist[:, -1] + dz * model.feature_norm.std


def _as_history(model: TransitionModel, history) -> np.ndarray:
    h = np.asarray(history, dtype=float)
    if h.ndim == 1:
        h = h[None]
    L = model.history_len
    if h.ndim != 2 or h.shape[1] != model.dim or h.shape[0] not in (L, 1):
        raise DimensionMismatch(f"history shape {h.shape} does not match ({L}, {model.dim})")
    if h.shape[0] != L:
        h = np.repeat(h, L, axis=0)
    return h


def predict_next(model: TransitionModel, history, action) -> np.ndarray:
    """x~_{t+1} = x_t + f(history, a_t); ``history`` is (k+1, d) oldest-first, or a single state."""
    h = _as_history(model, history)
    a = np.asarray(action, dtype=float).reshape(1, 2)
    return _step_batch(model, h[None], a)[0]


def propagate_batch(model: TransitionModel, histories, actions) -> np.ndarray:
    """Propagate m candidate sequences at once.

    ``histories``: a single state (d,), (L, d) shared, or (m, L, d); ``actions``: (m, H, 2).
    Returns (m, H + 1, d).
    """
    actions = np.asarray(actions, dtype=float)
    m, horizon = actions.shape[:2]
    h = np.asarray(histories, dtype=float)
    if h.ndim <= 2:
        h = np.broadcast_to(_as_history(model, h), (m, model.history_len, model.dim))
    hist = np.array(h, dtype=float)
    path = np.empty((m, horizon + 1, model.dim))
    path[:, 0] = hist[:, -1]
    for t in range(horizon):
        nxt = _step_batch(model, hist, actions[:, t])
        path[:, t + 1] = nxt
        hist = np.concatenate([hist[:, 1:], nxt[:, None]], axis=1)
    return path


def propagate(model: TransitionModel, history, actions) -> np.ndarray:
    """Path {x_t, x~_{t+1}, ..., x~_{t+H}} of length H + 1 for H actions."""
    actions = np.asarray(actions, dtype=float).reshape(-1, 2)
    return propagate_batch(model, _as_history(model, history), actions[None])[0]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def eval_one_step(model: TransitionModel, test: EpisodeDataset):
    """(model RMSE, persistence RMSE) of next-state prediction in normalized feature space."""
    H, A, X, Xn, _ = transition_pairs(test, model.state, model.history_len)
    if len(X) == 0:
        raise EmptyData("test split holds no transition pairs")
    pred = _step_batch(model, H, A)
    norm = model.feature_norm
    err = norm.apply(pred) - norm.apply(Xn)
    base = norm.apply(X) - norm.apply(Xn)
    return float(np.sqrt(np.mean(err**2))), float(np.sqrt(np.mean(base**2)))


def _decode(obs, seqs: np.ndarray) -> np.ndarray:
    """Poses for the last ``n`` entries of each feature sequence (m, n_total, d) -> (m, n, 3)."""
    w = obs.window
    m, n_total, d = seqs.shape
    if w == 1:
        flat = seqs.reshape(-1, d)
    else:
        idx = np.arange(w - 1, n_total)[:, None] + np.arange(-w + 1, 1)[None, :]
        flat = seqs[:, idx].reshape(-1, w, d)
    poses = percept.predict_poses(obs, flat)
    return poses.reshape(m, -1, 3)


def eval_open_loop(model: TransitionModel, obs, test: EpisodeDataset, horizon: int = 50,
                   stride: int = 10) -> np.ndarray:
    """Mean (position mm, orientation deg) error per step 1..horizon, never re-anchored.

    Windows start every ``stride`` steps wherever ``horizon`` logged actions follow
    inside the same episode. ``obs`` decodes predicted features into poses; pass
    ``None`` for a vis-state model whose first three dimensions are the pose.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    recs = test.records
    X = state_matrix(recs, model.state)
    ids = [r.episode_id for r in recs]
    L = model.history_len
    w_obs = 1 if obs is None else obs.window
    pad = max(L, w_obs)
    Hpad = _histories(X, ids, pad)
    A = np.array([r.action for r in recs], dtype=float).reshape(-1, 2)
    P = test.poses()
    starts = []
    i = 0
    while i < len(recs):
        j = i
        while j < len(recs) and ids[j] == ids[i]:
            j += 1
        starts.extend(range(i, j - horizon, stride))
        i = j
    if not starts:
        raise EmptyData(f"no test episode is longer than the horizon ({horizon})")
    starts = np.array(starts)
    acts = np.stack([A[s:s + horizon] for s in starts])
    truth = np.stack([P[s + 1:s + horizon + 1] for s in starts])
    path = propagate_batch(model, Hpad[starts][:, pad - L:], acts)
    if obs is None:
        pred = path[:, 1:, :3]
    else:
        seqs = np.concatenate([Hpad[starts][:, pad - w_obs:], path[:, 1:]], axis=1)
        pred = _decode(obs, seqs)[:, -horizon:]
    pos = np.linalg.norm(pred[..., :2] - truth[..., :2], axis=2)
    ori = np.abs(percept.wrap_deg(np.degrees(pred[..., 2] - truth[..., 2])))
    return np.column_stack([pos.mean(axis=0), ori.mean(axis=0)])


def write_curve(curve: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "pos_err_mm", "ori_err_deg"])
        for k, (p, o) in enumerate(curve, start=1):
            w.writerow([k, f"{p:.6f}", f"{o:.6f}"])
    return path


def save_transition(model: TransitionModel, path) -> Path:
    state = VIS_STATE if model.state == VIS_STATE else model.state.id
    extra = {"role": "transition", "state": state, "past_states": model.past_states,
             "feature_norm": model.feature_norm.to_dict()}
    return regress.save(model.regressor, path, extra=extra)


def load_transition(path) -> TransitionModel:
    extra = regress.read_extra(path)
    if extra.get("role") != "transition":
        raise SpecMismatch(f"{path}: not a transition model")
    state = VIS_STATE if extra["state"] == VIS_STATE else combination(extra["state"])
    return TransitionModel(regress.load(path), state, int(extra["past_states"]),
                           Normalizer.from_dict(extra["feature_norm"]))
