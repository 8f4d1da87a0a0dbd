"""Random-action data collection, the on-disk dataset format, feature extraction."""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import handsim
from .errors import InsufficientEpisodes, MalformedRow, VersionMismatch
from .handsim import HandConfig, NoiseModel, ObjectSpec, Pose, SensorReading

FORMAT_VERSION = "1"
CSV_HEADER = [
    "t", "a1", "a2", "enc1", "enc2", "load1", "load2", "tac1", "tac2",
    "px", "py", "yaw", "ix", "iy", "iyaw", "dropped",
]


def r9(v: float) -> float:
    """Round to the 9 significant digits the dataset files carry."""
    return float(f"{v:.9g}")


@dataclass(frozen=True)
class Record:
    episode_id: int
    t: int
    sensor: SensorReading
    action: tuple
    initial_pose: Pose
    dropped: bool = False


@dataclass
class EpisodeDataset:
    records: list
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def episode_ids(self) -> list:
        seen = []
        for r in self.records:
            if not seen or seen[-1] != r.episode_id:
                seen.append(r.episode_id)
        return seen

    def episodes(self) -> dict:
        out = {}
        for r in self.records:
            out.setdefault(r.episode_id, []).append(r)
        return out

    def subset(self, episode_ids) -> "EpisodeDataset":
        keep = set(episode_ids)
        recs = [r for r in self.records if r.episode_id in keep]
        man = dict(self.manifest)
        man["n_records"] = len(recs)
        man["n_episodes"] = len(keep)
        return EpisodeDataset(recs, man)

    def poses(self) -> np.ndarray:
        return np.array([r.sensor.truth_pose.as_array() for r in self.records])

    def actions(self) -> np.ndarray:
        return np.array([r.action for r in self.records], dtype=float)


@dataclass(frozen=True)
class FeatureCombination:
    id: int
    members: frozenset

    @property
    def dim(self) -> int:
        return sum(_BLOCK_DIMS[m] for m in _BLOCK_ORDER if m in self.members)

    @property
    def has_initial_pose(self) -> bool:
        return "initial_pose" in self.members


_BLOCK_ORDER = ("angles", "loads", "tactile", "initial_pose")
_BLOCK_DIMS = {"angles": 2, "loads": 2, "tactile": 2, "initial_pose": 3}

COMBINATIONS = {
    i: FeatureCombination(i, frozenset(m))
    for i, m in {
        1: {"loads"},
        2: {"tactile"},
        3: {"loads", "tactile"},
        4: {"angles"},
        5: {"angles", "loads"},
        6: {"angles", "tactile"},
        7: {"angles", "loads", "tactile"},
        8: {"angles", "loads", "initial_pose"},
        9: {"angles", "loads", "tactile", "initial_pose"},
    }.items()
}


def combination(comb) -> FeatureCombination:
    if isinstance(comb, FeatureCombination):
        return comb
    return COMBINATIONS[int(comb)]


def extract_features(record: Record, comb) -> np.ndarray:
    """Concatenate [angles | loads | tactile | initial pose] restricted to ``comb``."""
    comb = combination(comb)
    s = record.sensor
    blocks = {
        "angles": s.enc_angles,
        "loads": s.loads,
        "tactile": s.tactile,
        "initial_pose": (record.initial_pose.x, record.initial_pose.y, record.initial_pose.yaw),
    }
    out = []
    for name in _BLOCK_ORDER:
        if name in comb.members:
            out.extend(blocks[name])
    return np.array(out, dtype=float)


def feature_matrix(records: Sequence[Record], comb) -> np.ndarray:
    comb = combination(comb)
    if not records:
        return np.zeros((0, comb.dim))
    return np.stack([extract_features(r, comb) for r in records])


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------

@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def fit_normalizer(train, center: bool = True) -> Normalizer:
    """Per-dimension z-score statistics; zero-variance dimensions get std 1."""
    x = np.asarray(train, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) == 0:
        raise ValueError("cannot fit a normalizer on empty data")
    mean = x.mean(axis=0) if center else np.zeros(x.shape[1])
    std = x.std(axis=0) if center else np.sqrt(np.mean(x**2, axis=0))
    std = np.where(std > 1e-12, std, 1.0)
    return Normalizer(mean, std)


def apply(normalizer: Normalizer, vector):
    return normalizer.apply(vector)


# ---------------------------------------------------------------------------
# Collection
# ---------------------------------------------------------------------------

def episode_seed(root: int, noise_seed: int, episode: int, stream: int = 0) -> int:
    return int(np.random.SeedSequence([int(root), int(noise_seed), int(episode), stream]).generate_state(1)[0])


def _round_reading(reading: SensorReading) -> SensorReading:
    p = reading.truth_pose
    return SensorReading(
        enc_angles=tuple(r9(v) for v in reading.enc_angles),
        loads=tuple(r9(v) for v in reading.loads),
        tactile=tuple(r9(v) for v in reading.tactile),
        truth_pose=Pose(r9(p.x), r9(p.y), r9(p.yaw)),
    )


def collect_episode(config: HandConfig, obj: ObjectSpec, noise: NoiseModel, episode: int,
                    max_steps: int, seed: int) -> list:
    """One grasp-to-drop episode of held uniform random actions."""
    state = handsim.grasp_reset(config, obj, episode_seed(seed, noise.seed, episode))
    explore = np.random.default_rng(episode_seed(seed, noise.seed, episode, 1))
    initial = None
    records = []
    action = (0.5, 0.5)
    hold = 0
    for t in range(max_steps):
        reading = _round_reading(handsim.read_sensors(state, noise))
        if initial is None:
            initial = reading.truth_pose
        if hold == 0:
            action = tuple(r9(v) for v in explore.uniform(0.0, 1.0, 2))
            hold = int(explore.integers(5, 21))
        hold -= 1
        outcome = handsim.step(state, action)
        records.append(Record(episode, t, reading, action, initial, outcome.dropped))
        if outcome.dropped:
            break
        state = outcome.next
    return records


def _collect_job(args):
    return collect_episode(*args)


def collect(config: HandConfig, obj: ObjectSpec, n_episodes: int, max_steps: int, seed: int,
            noise: Optional[NoiseModel] = None, min_records: int = 0, jobs: int = 1,
            first_episode: int = 0, timestamp: Optional[str] = None) -> EpisodeDataset:
    """Collect ``n_episodes`` episodes (more if ``min_records`` is not yet reached).

    Episode ``e`` draws from seeds derived from ``(seed, noise.seed, e)`` only, so
    the result is independent of ``jobs``.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    noise = noise or NoiseModel()
    records = []
    episode = first_episode
    batch = max(1, int(jobs))
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        while episode - first_episode < n_episodes or len(records) < min_records:
            todo = batch if episode - first_episode >= n_episodes else min(batch, n_episodes - (episode - first_episode))
            args = [(config, obj, noise, e, max_steps, seed) for e in range(episode, episode + todo)]
            chunks = pool.map(_collect_job, args) if pool else map(_collect_job, args)
            for chunk in chunks:
                records.extend(chunk)
            episode += todo
    finally:
        if pool:
            pool.shutdown()
    ids = list(range(first_episode, episode))
    manifest = {
        "version": FORMAT_VERSION,
        "object": obj.label,
        "config": {
            "hand": config_to_dict(config),
            "object": dataclasses.asdict(obj),
            "noise": dataclasses.asdict(noise),
        },
        "seeds": {
            "root": int(seed),
            "noise": int(noise.seed),
            "episodes": {str(e): episode_seed(seed, noise.seed, e) for e in ids},
        },
        "max_steps": int(max_steps),
        "n_episodes": len(ids),
        "n_records": len(records),
        "collected_at": timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    return EpisodeDataset(records, manifest)


def config_to_dict(config: HandConfig) -> dict:
    d = dataclasses.asdict(config)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPolicy:
    test_episodes: float = 0.1  # count if >= 1 and integral, else fraction of all episodes
    critic_holdout_fraction: float = 0.15  # fraction of all episodes, taken from the training pool


def _count(spec, total) -> int:
    if isinstance(spec, int) or (float(spec) >= 1 and float(spec).is_integer()):
        return int(spec)
    return int(math.floor(float(spec) * total + 1e-9))


def split(dataset: EpisodeDataset, policy: SplitPolicy = SplitPolicy()):
    """Episode-disjoint (train, test, critic_holdout) split in episode order.

    Layout along the episode order: train first, then the critic holdout, then
    the test episodes last.
    """
    ids = dataset.episode_ids()
    n = len(ids)
    n_test = _count(policy.test_episodes, n)
    n_hold = _count(policy.critic_holdout_fraction, n)
    if n_test + n_hold >= n or n == 0:
        raise InsufficientEpisodes(
            f"{n} episodes cannot provide {n_test} test + {n_hold} holdout episodes and a training set"
        )
    train_ids = ids[: n - n_test - n_hold]
    hold_ids = ids[n - n_test - n_hold: n - n_test]
    test_ids = ids[n - n_test:]
    return dataset.subset(train_ids), dataset.subset(test_ids), dataset.subset(hold_ids)


def merge(*datasets: EpisodeDataset) -> EpisodeDataset:
    recs = [r for d in datasets for r in d.records]
    man = dict(datasets[0].manifest) if datasets else {}
    man["n_records"] = len(recs)
    return EpisodeDataset(recs, man)


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    return f"{v:.9g}"


def write(dataset: EpisodeDataset, directory) -> Path:
    d = Path(directory)
    (d / "episodes").mkdir(parents=True, exist_ok=True)
    manifest = dict(dataset.manifest)
    manifest["version"] = FORMAT_VERSION
    manifest["n_records"] = len(dataset.records)
    manifest["episode_files"] = []
    for eid, recs in dataset.episodes().items():
        name = f"ep{eid:05d}.csv"
        manifest["episode_files"].append(name)
        with open(d / "episodes" / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in recs:
                s, ip = r.sensor, r.initial_pose
                p = s.truth_pose
                w.writerow([
                    r.t, *map(_fmt, r.action), *map(_fmt, s.enc_angles), *map(_fmt, s.loads),
                    *map(_fmt, s.tactile), _fmt(p.x), _fmt(p.y), _fmt(p.yaw),
                    _fmt(ip.x), _fmt(ip.y), _fmt(ip.yaw), int(r.dropped),
                ])
    manifest["n_episodes"] = len(manifest["episode_files"])
    with open(d / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return d


def read(directory) -> EpisodeDataset:
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"dataset manifest not found: {mpath}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    if str(manifest.get("version")) != FORMAT_VERSION:
        raise VersionMismatch(f"dataset version {manifest.get('version')!r} != {FORMAT_VERSION!r} ({d})")
    records = []
    row_index = 0
    for name in manifest.get("episode_files", []):
        path = d / "episodes" / name
        eid = int(name[2:7])
        with open(path, newline="") as fh:
            rows = csv.reader(fh)
            header = next(rows, None)
            if header != CSV_HEADER:
                raise MalformedRow("unexpected header", row=0, path=path)
            initial = None
            for line_no, row in enumerate(rows, start=1):
                row_index += 1
                if len(row) != len(CSV_HEADER):
                    raise MalformedRow(f"expected {len(CSV_HEADER)} fields, got {len(row)}", row=line_no, path=path)
                try:
                    t = int(row[0])
                    v = [float(x) for x in row[1:15]]
                    dropped = row[15]
                except ValueError as exc:
                    raise MalformedRow(f"unparsable value: {exc}", row=line_no, path=path) from None
                if dropped not in ("0", "1"):
                    raise MalformedRow("dropped must be 0 or 1", row=line_no, path=path)
                if t != line_no - 1:
                    raise MalformedRow(f"t={t} breaks the step sequence", row=line_no, path=path)
                ip = Pose(v[11], v[12], v[13])
                if initial is None:
                    initial = ip
                elif ip != initial:
                    raise MalformedRow("initial pose changes within an episode", row=line_no, path=path)
                records.append(Record(
                    episode_id=eid,
                    t=t,
                    sensor=SensorReading((v[2], v[3]), (v[4], v[5]), (v[6], v[7]), Pose(v[8], v[9], v[10])),
                    action=(v[0], v[1]),
                    initial_pose=ip,
                    dropped=dropped == "1",
                ))
    if int(manifest.get("n_records", -1)) != len(records):
        raise MalformedRow(
            f"manifest declares {manifest.get('n_records')} records but files hold {len(records)}",
            row=len(records), path=mpath,
        )
    return EpisodeDataset(records, manifest)
