"""Declarative run configuration: TOML file + ``section.key=value`` overrides over full defaults."""

from __future__ import annotations

import copy
import dataclasses
import json
import zlib
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import control, handsim, percept
from .datagen import SplitPolicy
from .errors import ConfigError
from .handsim import HandConfig, NoiseModel, ObjectSpec, TactilePad
from .regress import RegressorSpec


def _regressor_section(spec: RegressorSpec, **extra) -> dict:
    d = spec.to_dict()
    d.update(extra)
    return d


def _hand_defaults() -> dict:
    d = dataclasses.asdict(HandConfig())
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


DEFAULTS = {
    "seed": 0,
    "run_dir": "runs/default",
    "hand": _hand_defaults(),
    "object": {"name": "circ15", "shape": "", "size": 0.0, "friction": "standard", "label": ""},
    "noise": dataclasses.asdict(NoiseModel()),
    "data": {
        "n_episodes": 60,
        "max_steps": 600,
        "min_records": 28000,
        "test_episodes": 0.1,
        "critic_holdout_fraction": 0.15,
        "sweep_fractions": [0.2, 0.4, 0.6, 0.8, 1.0],
        "transfer_objects": ["circ15", "circ10", "circ15hf", "sq20"],
    },
    "obs": _regressor_section(RegressorSpec(kind="fc_nn"), comb=7),
    "critic": _regressor_section(percept.CRITIC_SPEC),
    "trans": _regressor_section(RegressorSpec(kind="fc_nn"), comb=7, past_states=2, horizon=50, stride=10),
    "mpc": {"h": 10, "m": 100, "w1": 0.8, "w2": 0.2, "tolerance": 4.0, "max_steps": 1000, "kx": 200.0, "ky": 200.0},
    "bench": {"goals": 20, "methods": list(control.METHODS)},
}


def _merge(base: dict, new: dict, where: str = "") -> None:
    for key, value in new.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        cur = base[key]
        if isinstance(cur, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path!r} must be a table")
            _merge(cur, value, path + ".")
            continue
        if isinstance(value, dict):
            raise ConfigError(f"{path!r} must be a value, not a table")
        if isinstance(cur, bool) != isinstance(value, bool):
            raise ConfigError(f"{path!r} expects {type(cur).__name__}, got {value!r}")
        if isinstance(cur, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        elif isinstance(cur, list) and isinstance(value, list):
            pass
        elif type(cur) is not type(value):
            raise ConfigError(f"{path!r} expects {type(cur).__name__}, got {value!r}")
        base[key] = value


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_override(item: str) -> dict:
    """``a.b.c=value`` -> nested dict; the value is read as a TOML literal, else as a bare string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    key, text = item.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"malformed override key {key!r}")
    out = value = {}
    for p in parts[:-1]:
        value[p] = {}
        value = value[p]
    value[parts[-1]] = _parse_value(text.strip())
    return out


@dataclasses.dataclass
class RunConfig:
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def run_dir(self) -> Path:
        return Path(self.data["run_dir"])

    # -- builders ---------------------------------------------------------
    def hand(self) -> HandConfig:
        h = dict(self.data["hand"])
        tactile = TactilePad(**h.pop("tactile"))
        h = {k: (tuple(v) if isinstance(v, list) else v) for k, v in h.items()}
        return HandConfig(tactile=tactile, **h)

    def object(self, name: str = None) -> ObjectSpec:
        o = self.data["object"]
        if name is None and o["shape"]:
            return ObjectSpec(o["shape"], o["size"], o["friction"], o["label"])
        name = name or o["name"]
        if name not in handsim.OBJECTS:
            raise ConfigError(f"unknown object {name!r}; known: {sorted(handsim.OBJECTS)}")
        return handsim.OBJECTS[name]

    def noise(self) -> NoiseModel:
        return NoiseModel(**self.data["noise"])

    def split_policy(self) -> SplitPolicy:
        d = self.data["data"]
        return SplitPolicy(d["test_episodes"], d["critic_holdout_fraction"])

    def regressor(self, section: str, kind: str = None, stage: str = None) -> RegressorSpec:
        d = {k: v for k, v in self.data[section].items() if k in ("kind", "gp", "fc", "lstm", "train")}
        d = copy.deepcopy(d)
        if kind:
            d["kind"] = kind
        if stage is not None:
            d["train"]["seed"] = stage_seed(self.seed, f"{stage}:{d['train']['seed']}")
        return RegressorSpec.from_dict(d)

    def mpc(self) -> control.MpcParams:
        m = self.data["mpc"]
        return control.MpcParams(m["h"], m["m"], m["w1"], m["w2"], m["tolerance"], m["max_steps"],
                                 stage_seed(self.seed, "mpc"), m["kx"], m["ky"])

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"


def validate(cfg: RunConfig) -> RunConfig:
    """Build every typed section once so bad values surface as ConfigError at load time."""
    try:
        cfg.hand()
        cfg.object()
        cfg.noise()
        for section in ("obs", "critic", "trans"):
            cfg.regressor(section)
        cfg.mpc()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    for section in ("obs", "trans"):
        if cfg[section]["comb"] not in range(1, 10):
            raise ConfigError(f"{section}.comb must be 1..9")
    for m in cfg["bench"]["methods"]:
        if m not in control.METHODS:
            raise ConfigError(f"unknown benchmark method {m!r}")
    for f in cfg["data"]["sweep_fractions"]:
        if not 0 < f <= 1:
            raise ConfigError("sweep fractions must lie in (0, 1]")
    return cfg


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults <- TOML file (if any) <- overrides, validated; unknown keys raise ConfigError."""
    data = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, "rb") as fh:
                _merge(data, tomllib.load(fh))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for item in overrides:
        _merge(data, parse_override(item))
    return validate(RunConfig(data))


def stage_seed(root: int, stage: str) -> int:
    """Per-stage seed: the stage label is hashed into the root seed's stream."""
    return int(np.random.SeedSequence([int(root), zlib.crc32(stage.encode())]).generate_state(1)[0])
