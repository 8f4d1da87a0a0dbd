"""Haptic servoing, random-shooting MPC with an optional critic term, roll-outs and the benchmark."""

from __future__ import annotations

import csv
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull, Delaunay

from . import dynamics, handsim, percept
from .datagen import EpisodeDataset
from .errors import ConfigError, PlanTimeout
from .handsim import HandConfig, NoiseModel, ObjectSpec

METHODS = ("OL", "HS", "MPC", "MPC-Critic", "VS", "MPC-Vis")
NEUTRAL = np.array([0.5, 0.5])


@dataclass(frozen=True)
class MpcParams:
    horizon: int = 10
    samples: int = 100
    w1: float = 0.8
    w2: float = 0.2
    tolerance: float = 4.0  # mm
    max_steps: int = 1000
    seed: int = 0
    kx: float = 200.0  # servo gains (HS / VS)
    ky: float = 200.0

    def __post_init__(self):
        if self.horizon < 1 or self.samples < 1:
            raise ConfigError("horizon and samples must be >= 1")
        if self.w1 < 0 or self.w2 < 0:
            raise ConfigError("cost weights must be >= 0")
        if not self.tolerance > 0:
            raise ConfigError("goal tolerance must be > 0")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if not (self.kx > 0 and self.ky > 0):
            raise ConfigError("servo gains must be > 0")


# ---------------------------------------------------------------------------
# Haptic servoing
# ---------------------------------------------------------------------------

def servo_command(position, goal, kx: float = 200.0, ky: float = 200.0) -> np.ndarray:
    """Proportional servo on a position estimate -> normalized action (0.5 is neutral)."""
    if not (kx > 0 and ky > 0):
        raise ConfigError("servo gains must be > 0")
    vx, vy = np.asarray(goal, dtype=float)[:2] - np.asarray(position, dtype=float)[:2]
    u = np.array([vx / kx + vy / ky, -vx / kx + vy / ky])
    return np.clip(0.5 + u / 2.0, 0.0, 1.0)


def haptic_servo_step(obs_model, window, goal, kx: float = 200.0, ky: float = 200.0) -> np.ndarray:
    est = percept.estimate_pose(obs_model, window)
    return servo_command((est.x, est.y), goal, kx, ky)


# ---------------------------------------------------------------------------
# Path cost and shooting
# ---------------------------------------------------------------------------

def _positions(paths: np.ndarray, obs) -> np.ndarray:
    """(m, n, d) feature paths -> (m, n, 2) positions; ``obs=None`` reads them from the state."""
    if obs is None:
        return paths[..., :2]
    m, n, d = paths.shape
    w = obs.window
    if w == 1:
        return percept.predict_poses(obs, paths.reshape(-1, d))[:, :2].reshape(m, n, 2)
    idx = np.maximum(np.arange(n)[:, None] + np.arange(-w + 1, 1)[None, :], 0)
    return percept.predict_poses(obs, paths[:, idx].reshape(-1, w, d))[:, :2].reshape(m, n, 2)


def path_costs(paths: np.ndarray, obs, critic, goal, w1: float, w2: float) -> np.ndarray:
    """Cost of each of m paths: sum over states of w1*|pos - goal|^2 + w2*critic."""
    paths = np.asarray(paths, dtype=float)
    m, n, d = paths.shape
    goal = np.asarray(goal, dtype=float)[:2]
    cost = np.zeros(m)
    if w1 != 0:
        pos = _positions(paths, obs)
        cost += w1 * np.sum(np.sum((pos - goal) ** 2, axis=2), axis=1)
    if w2 != 0 and critic is not None:
        e = percept.critic_errors(critic, paths.reshape(-1, d)).reshape(m, n)
        cost += w2 * np.sum(e, axis=1)
    return cost


def path_cost(path, obs, critic, goal, w1: float, w2: float) -> float:
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[None]
    if len(path) == 0:
        raise ValueError("path must hold at least one state")
    return float(path_costs(path[None], obs, critic, goal, w1, w2)[0])


Sampler = Callable[[np.random.Generator, int, int], np.ndarray]


def uniform_sampler(rng: np.random.Generator, m: int, length: int) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=(m, length, 2))


def hold_sampler(rng: np.random.Generator, m: int, length: int, hold=(5, 20)) -> np.ndarray:
    """Piecewise-constant sequences mirroring the data-collection exploration."""
    out = np.empty((m, length, 2))
    for i in range(m):
        t = 0
        while t < length:
            k = int(rng.integers(hold[0], hold[1] + 1))
            out[i, t:t + k] = rng.uniform(0.0, 1.0, 2)
            t += k
    return out


def grid_sampler(levels: int = 3) -> Sampler:
    """Exhaustive enumeration of every sequence over a ``levels``-per-axis action grid (ignores m)."""
    grid = np.linspace(0.0, 1.0, levels)
    actions = np.array(list(itertools.product(grid, grid)))

    def sample(rng, m, length):
        idx = np.array(list(itertools.product(range(len(actions)), repeat=length)))
        return actions[idx]

    return sample


@dataclass
class MpcDiagnostics:
    costs: np.ndarray
    index: int
    sequences: np.ndarray


def mpc_step(trans, obs, critic, history, goal, params: MpcParams = MpcParams(),
             sampler: Optional[Sampler] = None, rng: Optional[np.random.Generator] = None,
             w1: float = None, w2: float = None):
    """Random shooting: sample sequences of H+1 actions, propagate, return the first action of the cheapest.

    Ties go to the lowest sequence index. ``obs=None`` means the transition state
    carries the position in its first two dimensions (camera-state model).
    """
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    sampler = sampler or uniform_sampler
    w1 = params.w1 if w1 is None else w1
    w2 = params.w2 if w2 is None else w2
    seqs = sampler(rng, params.samples, params.horizon + 1)
    paths = dynamics.propagate_batch(trans, history, seqs)
    costs = path_costs(paths, obs, critic, goal, w1, w2)
    k = int(np.argmin(costs))
    return seqs[k, 0].copy(), MpcDiagnostics(costs, k, seqs)


@dataclass
class OpenLoopPlan:
    actions: np.ndarray  # (n, 2)
    reached: bool  # predicted position came within tolerance before the cap


def plan_open_loop(trans, obs, critic, initial_history, goal, params: MpcParams = MpcParams(),
                   sampler: Optional[Sampler] = None, rng=None, strict: bool = False) -> OpenLoopPlan:
    """Chain mpc_step on the model's own predictions (never on measurements)."""
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    hist = dynamics._as_history(trans, initial_history)
    goal = np.asarray(goal, dtype=float)[:2]
    actions = []
    while True:
        pos = _positions(hist[None, -max(1, obs.window if obs else 1):], obs)[0, -1]
        if np.linalg.norm(pos - goal) <= params.tolerance:
            return OpenLoopPlan(np.array(actions).reshape(-1, 2), True)
        if len(actions) >= params.max_steps:
            plan = OpenLoopPlan(np.array(actions).reshape(-1, 2), False)
            if strict:
                raise PlanTimeout(f"open-loop plan hit the {params.max_steps}-step cap", plan=plan)
            return plan
        a, _ = mpc_step(trans, obs, critic, hist, goal, params, sampler, rng)
        actions.append(a)
        nxt = dynamics.predict_next(trans, hist, a)
        hist = np.concatenate([hist[1:], nxt[None]], axis=0)


# ---------------------------------------------------------------------------
# Roll-outs
# ---------------------------------------------------------------------------

@dataclass
class ControlModels:
    obs: object = None  # ObservationModel
    critic: object = None  # CriticModel
    trans: object = None  # TransitionModel on haptic features
    trans_vis: object = None  # TransitionModel on (pose, loads)
    initial_history: Optional[np.ndarray] = None  # mean initial grasp feature state (for OL)


@dataclass
class RolloutResult:
    method: str
    goal: tuple
    final_error: float
    path_length: float
    steps: int
    outcome: str  # success | dropped | timeout | stopped
    success: bool
    log: list = field(default_factory=list)


def _features(reading, comb) -> np.ndarray:
    from .datagen import Record, extract_features
    return extract_features(Record(0, 0, reading, (0.5, 0.5), reading.truth_pose), comb)


def _vis_state(reading) -> np.ndarray:
    return np.array([*reading.truth_pose.as_array(), *reading.loads])


def _window(buf: list, length: int) -> np.ndarray:
    idx = np.maximum(np.arange(len(buf) - length, len(buf)), 0)
    return np.array([buf[i] for i in idx])


def rollout(method: str, models: ControlModels, goal, grasp_seed: int, config: HandConfig = HandConfig(),
            obj: ObjectSpec = handsim.OBJECTS["circ15"], noise: NoiseModel = NoiseModel(),
            params: MpcParams = MpcParams(), rng_seed: int = 0) -> RolloutResult:
    """One closed-loop (or open-loop, for OL) attempt from a fresh grasp.

    Stops on predicted arrival (estimate within tolerance; the truth for VS/MPC-Vis),
    on a drop, or at the step cap. Success is judged on the true final error.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    goal = np.asarray(goal, dtype=float)[:2]
    rng = np.random.default_rng(np.random.SeedSequence([int(params.seed), int(rng_seed)]))
    state = handsim.grasp_reset(config, obj, grasp_seed)
    oracle = method in ("VS", "MPC-Vis")
    comb = models.obs.combination if models.obs is not None else None
    feats, vis = [], []
    log = []
    plan = None
    if method == "OL":
        plan = plan_open_loop(models.trans, models.obs, models.critic, models.initial_history, goal,
                              params, rng=rng).actions
    path_len = 0.0
    outcome = "timeout"
    prev = np.array([state.pose.x, state.pose.y])
    t = 0
    while True:
        reading = handsim.read_sensors(state, noise)
        truth = np.array([reading.truth_pose.x, reading.truth_pose.y])
        if comb is not None:
            feats.append(_features(reading, comb))
        vis.append(_vis_state(reading))
        if oracle:
            est = truth
        elif method == "OL":
            est = None
        else:
            est = percept.estimate_pose(models.obs, _window(feats, models.obs.window) if models.obs.window > 1
                                        else feats[-1])
            est = np.array([est.x, est.y])
        if method == "OL":
            if t >= len(plan):
                outcome = "stopped"
                break
        elif np.linalg.norm(est - goal) <= params.tolerance:
            outcome = "stopped"
            break
        if t >= params.max_steps:
            outcome = "timeout"
            break
        if method == "OL":
            a, cost = plan[t], None
        elif method in ("HS", "VS"):
            a, cost = servo_command(est, goal, params.kx, params.ky), None
        elif method == "MPC-Vis":
            hist = _window(vis, models.trans_vis.history_len)
            a, diag = mpc_step(models.trans_vis, None, None, hist, goal, params, rng=rng, w2=0.0)
            cost = float(diag.costs[diag.index])
        else:
            hist = _window(feats, models.trans.history_len)
            w2 = params.w2 if method == "MPC-Critic" else 0.0
            a, diag = mpc_step(models.trans, models.obs, models.critic if w2 else None, hist, goal, params,
                               rng=rng, w2=w2)
            cost = float(diag.costs[diag.index])
        log.append({
            "t": t,
            "true": [float(v) for v in reading.truth_pose.as_array()],
            "est": None if est is None else [float(v) for v in est],
            "action": [float(v) for v in a],
            "cost": cost,
        })
        out = handsim.step(state, a)
        state = out.next
        t += 1
        pos = np.array([state.pose.x, state.pose.y])
        path_len += float(np.linalg.norm(pos - prev))
        prev = pos
        if out.dropped:
            outcome = "dropped"
            break
    final = float(np.linalg.norm(prev - goal))
    success = outcome != "dropped" and final <= params.tolerance
    if success:
        outcome = "success"
    return RolloutResult(method, (float(goal[0]), float(goal[1])), final, path_len, t, outcome, success, log)


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

def workspace_hull(train_poses: np.ndarray, shrink: float = 0.1) -> np.ndarray:
    """Vertices of the convex hull of training positions, shrunk toward its centroid."""
    pts = np.asarray(train_poses, dtype=float)[:, :2]
    hull = pts[ConvexHull(pts).vertices]
    c = hull.mean(axis=0)
    return c + (1.0 - shrink) * (hull - c)


def sample_goals(hull: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    tri = Delaunay(hull)
    lo, hi = hull.min(axis=0), hull.max(axis=0)
    goals = []
    while len(goals) < n:
        p = rng.uniform(lo, hi)
        if tri.find_simplex(p) >= 0:
            goals.append(p)
    return np.array(goals).reshape(-1, 2)


def mean_initial_history(train: EpisodeDataset, trans) -> np.ndarray:
    """Mean first-record feature state over training episodes, repeated to the model's history length."""
    firsts = [recs[0] for recs in train.episodes().values()]
    x = dynamics.state_matrix(firsts, trans.state).mean(axis=0)
    return np.repeat(x[None], trans.history_len, axis=0)


BENCH_HEADER = ["method", "goal_err_mm", "goal_err_std", "path_len_mm", "path_len_std", "success_rate", "n_goals"]


@dataclass
class BenchmarkRow:
    method: str
    goal_err: float
    goal_err_std: float
    path_len: float
    path_len_std: float
    success_rate: float
    n_goals: int


@dataclass
class Benchmark:
    rows: list
    goals: np.ndarray
    results: dict  # method -> [RolloutResult]

    def row(self, method: str) -> BenchmarkRow:
        return next(r for r in self.rows if r.method == method)


def _rollout_job(args):
    return rollout(*args)


def benchmark(methods: Sequence[str], n_goals: int, seed: int, models: ControlModels, train_poses,
              config: HandConfig = HandConfig(), obj: ObjectSpec = handsim.OBJECTS["circ15"],
              noise: NoiseModel = NoiseModel(), params: MpcParams = MpcParams(), jobs: int = 1) -> Benchmark:
    """Run every method on the same goals and grasp seeds."""
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
    ss = np.random.SeedSequence(int(seed))
    goal_seq, grasp_seq = ss.spawn(2)
    goals = sample_goals(workspace_hull(train_poses), n_goals, np.random.default_rng(goal_seq)) if n_goals else \
        np.zeros((0, 2))
    grasp_seeds = [int(s) for s in grasp_seq.generate_state(max(n_goals, 1))[:n_goals]]
    jobs_args = [(m, models, goals[i], grasp_seeds[i], config, obj, noise, params, i)
                 for m in methods for i in range(n_goals)]
    if jobs > 1 and jobs_args:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            flat = list(pool.map(_rollout_job, jobs_args))
    else:
        flat = [_rollout_job(a) for a in jobs_args]
    results = {m: flat[k * n_goals:(k + 1) * n_goals] for k, m in enumerate(methods)}
    rows = []
    for m in methods if n_goals else ():  # no goals: an empty table under the header
        rs = results[m]
        err = np.array([r.final_error for r in rs])
        pl = np.array([r.path_length for r in rs])
        rows.append(BenchmarkRow(m, float(err.mean()), float(err.std()), float(pl.mean()), float(pl.std()),
                                 float(np.mean([r.success for r in rs])), len(rs)))
    return Benchmark(rows, goals, results)


def write_benchmark(bench: Benchmark, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        for r in bench.rows:
            w.writerow([r.method, f"{r.goal_err:.6f}", f"{r.goal_err_std:.6f}", f"{r.path_len:.6f}",
                        f"{r.path_len_std:.6f}", f"{r.success_rate:.6f}", r.n_goals])
    return path


def write_traces(bench: Benchmark, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for method, rs in bench.results.items():
        for i, r in enumerate(rs):
            with open(d / f"{method}_{i:03d}.json", "w") as fh:
                json.dump(asdict(r), fh, indent=1, sort_keys=True)
                fh.write("\n")
    return d
