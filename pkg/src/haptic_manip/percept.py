"""Observation model (haptic features -> object pose), critic, and the evaluation protocols."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import datagen, regress
from .datagen import EpisodeDataset, FeatureCombination, SplitPolicy, combination
from .errors import DimensionMismatch, EmptyData, EmptyHoldout, MissingDataset, SpecMismatch
from .handsim import Pose
from .regress import FCSpec, RegressorSpec, TrainSpec, TrainedRegressor

CRITIC_SPEC = RegressorSpec(
    kind="fc_nn",
    fc=FCSpec(layers=2, width=128, output="softplus"),
    train=TrainSpec(max_epochs=100, patience=10),
)


def encode_pose(pose) -> np.ndarray:
    """Pose -> regression target (x, y, sin yaw, cos yaw)."""
    x, y, yaw = pose.as_array() if isinstance(pose, Pose) else np.asarray(pose, dtype=float)[:3]
    return np.array([x, y, math.sin(yaw), math.cos(yaw)])


def encode_poses(poses: np.ndarray) -> np.ndarray:
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    return np.column_stack([poses[:, 0], poses[:, 1], np.sin(poses[:, 2]), np.cos(poses[:, 2])])


def decode_poses(out: np.ndarray) -> np.ndarray:
    out = np.atleast_2d(out)
    return np.column_stack([out[:, 0], out[:, 1], np.arctan2(out[:, 2], out[:, 3])])


def feature_windows(records: Sequence, comb, window: int) -> np.ndarray:
    """Per-record inputs: (n, d) when ``window`` is 1, else (n, window, d) oldest-first.

    Windows never cross episode boundaries; at an episode start the first state is repeated.
    """
    comb = combination(comb)
    F = datagen.feature_matrix(records, comb)
    if window == 1:
        return F
    out = np.empty((len(F), window, F.shape[1]))
    start = 0
    for i in range(len(records)):
        if i == 0 or records[i].episode_id != records[i - 1].episode_id:
            start = i
        idx = np.maximum(np.arange(i - window + 1, i + 1), start)
        out[i] = F[idx]
    return out


@dataclass
class ObservationModel:
    regressor: TrainedRegressor
    combination: FeatureCombination

    @property
    def window(self) -> int:
        return self.regressor.window

    @property
    def input_dim(self) -> int:
        return self.combination.dim


@dataclass
class CriticModel:
    regressor: TrainedRegressor
    combination: FeatureCombination


@dataclass(frozen=True)
class EpisodeRmse:
    episode_id: int
    position_rmse: float
    orientation_rmse: float
    n: int


@dataclass(frozen=True)
class RmseReport:
    position_rmse: float  # mm
    orientation_rmse: float  # deg
    position_std: float  # std of per-episode RMSEs
    orientation_std: float
    n: int
    per_episode: tuple = ()


def train_observation(train: EpisodeDataset, comb, spec: RegressorSpec) -> ObservationModel:
    comb = combination(comb)
    if len(train) == 0:
        raise EmptyData("observation model needs training records")
    X = feature_windows(train.records, comb, spec.window)
    Y = encode_poses(train.poses())
    return ObservationModel(regress.fit(spec, X, Y), comb)


def predict_poses(model: ObservationModel, inputs) -> np.ndarray:
    """Batch of feature windows/vectors -> (n, 3) poses."""
    return decode_poses(regress.predict(model.regressor, inputs))


def estimate_pose(model: ObservationModel, window) -> Pose:
    """Single feature vector (w = 1) or (w, d) window -> Pose."""
    x = np.asarray(window, dtype=float)
    if model.window == 1 and x.ndim == 2 and x.shape[0] == 1:
        x = x[0]
    expect = (model.input_dim,) if model.window == 1 else (model.window, model.input_dim)
    if x.shape != expect:
        raise DimensionMismatch(f"window shape {x.shape} != model input {expect}")
    x_, y_, yaw = predict_poses(model, x[None])[0]
    return Pose(float(x_), float(y_), float(yaw))


def wrap_deg(d):
    """Wrap angles in degrees to (-180, 180]."""
    return 180.0 - np.mod(180.0 - np.asarray(d, dtype=float), 360.0)


def rmse_report(pred: np.ndarray, truth: np.ndarray, episode_ids: Sequence[int]) -> RmseReport:
    """RMSE of (n, 3) predicted vs true poses (mm, mm, rad); per-episode breakdown."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    truth = np.asarray(truth, dtype=float).reshape(-1, 3)
    if len(pred) == 0:
        raise EmptyData("cannot evaluate on an empty test split")
    pos2 = np.sum((pred[:, :2] - truth[:, :2]) ** 2, axis=1)
    ori2 = wrap_deg(np.degrees(pred[:, 2]) - np.degrees(truth[:, 2])) ** 2
    ids = np.asarray(episode_ids)
    per = []
    for eid in dict.fromkeys(ids.tolist()):
        sel = ids == eid
        per.append(EpisodeRmse(int(eid), float(np.sqrt(pos2[sel].mean())), float(np.sqrt(ori2[sel].mean())),
                               int(sel.sum())))
    return RmseReport(
        position_rmse=float(np.sqrt(pos2.mean())),
        orientation_rmse=float(np.sqrt(ori2.mean())),
        position_std=float(np.std([p.position_rmse for p in per])),
        orientation_std=float(np.std([p.orientation_rmse for p in per])),
        n=len(pred),
        per_episode=tuple(per),
    )


def evaluate_observation(model: ObservationModel, test: EpisodeDataset) -> RmseReport:
    X = feature_windows(test.records, model.combination, model.window)
    return rmse_report(predict_poses(model, X), test.poses(), [r.episode_id for r in test.records])


def position_errors(model: ObservationModel, data: EpisodeDataset) -> np.ndarray:
    """Euclidean position error (mm) of the observation model per record."""
    X = feature_windows(data.records, model.combination, model.window)
    pred = predict_poses(model, X)
    return np.linalg.norm(pred[:, :2] - data.poses()[:, :2], axis=1)


def train_critic(obs: ObservationModel, holdout: EpisodeDataset,
                 spec: RegressorSpec = CRITIC_SPEC) -> CriticModel:
    """Fit e_j = |predicted - true position| (mm) on holdout features."""
    if len(holdout) == 0:
        raise EmptyHoldout("critic holdout split is empty")
    labels = position_errors(obs, holdout)
    X = datagen.feature_matrix(holdout.records, obs.combination)
    return CriticModel(regress.fit(spec, X, labels[:, None]), obs.combination)


def critic_error(critic: CriticModel, x) -> float:
    """Critic estimate for one feature vector (or a window, whose newest state is used)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[-1]
    return float(regress.predict(critic.regressor, x)[0])


def critic_errors(critic: CriticModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 3:
        X = X[:, -1]
    return regress.predict(critic.regressor, X)[:, 0]


# ---------------------------------------------------------------------------
# Protocols
# ---------------------------------------------------------------------------

@dataclass
class TransferMatrix:
    labels: list
    reports: list  # reports[i][j]: trained on labels[i], tested on labels[j]

    def position(self) -> np.ndarray:
        return np.array([[r.position_rmse for r in row] for row in self.reports])

    def orientation(self) -> np.ndarray:
        return np.array([[r.orientation_rmse for r in row] for row in self.reports])


def _as_dataset(obj) -> EpisodeDataset:
    if isinstance(obj, EpisodeDataset):
        return obj
    if obj is None:
        raise MissingDataset("no dataset given")
    path = Path(obj)
    if not (path / "manifest.json").exists():
        raise MissingDataset(f"dataset not found: {path}")
    return datagen.read(path)


def cross_transfer(objects: Sequence, comb, spec: RegressorSpec,
                   policy: SplitPolicy = SplitPolicy()) -> TransferMatrix:
    """Train on each object's train split, evaluate on every object's test split."""
    datasets = [_as_dataset(o) for o in objects]
    splits = [datagen.split(d, policy) for d in datasets]
    labels = [d.manifest.get("object", str(i)) for i, d in enumerate(datasets)]
    models = [train_observation(tr, comb, spec) for tr, _, _ in splits]
    reports = [[evaluate_observation(m, te) for _, te, _ in splits] for m in models]
    return TransferMatrix(labels, reports)


def datasize_sweep(dataset: EpisodeDataset, fractions: Sequence[float], comb, spec: RegressorSpec,
                   policy: SplitPolicy = SplitPolicy()) -> list:
    """Sequential-prefix training sizes against a fixed test split; returns [(fraction, RmseReport)]."""
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"fraction {f} outside (0, 1]")
    train, test, _ = datagen.split(dataset, policy)
    comb = combination(comb)
    X = feature_windows(train.records, comb, spec.window)
    Y = encode_poses(train.poses())
    Xte = feature_windows(test.records, comb, spec.window)
    ids = [r.episode_id for r in test.records]
    curve = []
    for f in fractions:
        n = max(1, int(math.floor(f * len(X) + 1e-9)))
        model = ObservationModel(regress.fit(spec, X[:n], Y[:n]), comb)
        curve.append((float(f), rmse_report(predict_poses(model, Xte), test.poses(), ids)))
    return curve


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

RMSE_HEADER = ["comb", "regressor", "pos_rmse_mm", "pos_std", "ori_rmse_deg", "ori_std", "n"]


def _f(v: float) -> str:
    return f"{v:.6f}"


def write_rmse_table(rows: Sequence, path) -> Path:
    """``rows`` of (comb id, regressor kind, RmseReport)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RMSE_HEADER)
        for comb, kind, rep in rows:
            w.writerow([comb, kind, _f(rep.position_rmse), _f(rep.position_std),
                        _f(rep.orientation_rmse), _f(rep.orientation_std), rep.n])
    return path


def write_transfer(matrix: TransferMatrix, path, which: str = "position") -> Path:
    values = matrix.position() if which == "position" else matrix.orientation()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["train\\test", *matrix.labels])
        for label, row in zip(matrix.labels, values):
            w.writerow([label, *map(_f, row)])
    return path


def write_sweep(curve: Sequence, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fraction", "pos_rmse_mm", "pos_std", "ori_rmse_deg", "ori_std", "n"])
        for f, rep in curve:
            w.writerow([f"{f:g}", _f(rep.position_rmse), _f(rep.position_std),
                        _f(rep.orientation_rmse), _f(rep.orientation_std), rep.n])
    return path


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_observation(model: ObservationModel, path) -> Path:
    return regress.save(model.regressor, path, extra={"role": "observation", "comb": model.combination.id})


def load_observation(path) -> ObservationModel:
    extra = regress.read_extra(path)
    if extra.get("role") != "observation":
        raise SpecMismatch(f"{path}: not an observation model")
    return ObservationModel(regress.load(path), combination(extra["comb"]))


def save_critic(critic: CriticModel, path) -> Path:
    return regress.save(critic.regressor, path, extra={"role": "critic", "comb": critic.combination.id})


def load_critic(path) -> CriticModel:
    extra = regress.read_extra(path)
    if extra.get("role") != "critic":
        raise SpecMismatch(f"{path}: not a critic model")
    return CriticModel(regress.load(path), combination(extra["comb"]))
