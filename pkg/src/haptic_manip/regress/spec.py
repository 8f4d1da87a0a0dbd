from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..errors import ConfigError

KINDS = ("local_gp", "fc_nn", "lstm")


@dataclass(frozen=True)
class GPSpec:
    lengthscale: float = 1.0
    signal: float = 1.0
    noise: float = 0.05
    neighbors: int = 100
    optimize: bool = False  # grid search on log marginal likelihood before storing


@dataclass(frozen=True)
class FCSpec:
    layers: int = 3
    width: int = 300
    activation: str = "relu"
    dropout: float = 0.30
    l2: float = 1e-5
    output: str = "linear"  # "linear" or "softplus"


@dataclass(frozen=True)
class LSTMSpec:
    layers: int = 2
    hidden: int = 256
    window: int = 5
    head_width: int = 256
    l2: float = 0.0


@dataclass(frozen=True)
class TrainSpec:
    lr: float = 1e-3
    batch: int = 256
    max_epochs: int = 300
    patience: int = 20
    val_fraction: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class RegressorSpec:
    kind: str = "fc_nn"
    gp: GPSpec = field(default_factory=GPSpec)
    fc: FCSpec = field(default_factory=FCSpec)
    lstm: LSTMSpec = field(default_factory=LSTMSpec)
    train: TrainSpec = field(default_factory=TrainSpec)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown regressor kind {self.kind!r}; expected one of {KINDS}")
        if self.lstm.window < 1:
            raise ConfigError("lstm window must be >= 1")
        if self.gp.neighbors < 1:
            raise ConfigError("gp neighbors must be >= 1")
        if not 0.0 <= self.fc.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.fc.output not in ("linear", "softplus"):
            raise ConfigError(f"unknown output mapping {self.fc.output!r}")
        if self.fc.activation != "relu":
            raise ConfigError("only relu hidden activations are supported")
        if min(self.gp.lengthscale, self.gp.signal) <= 0 or self.gp.noise < 0:
            raise ConfigError("gp lengthscale and signal must be > 0, noise >= 0")
        if self.train.max_epochs < 0 or self.train.batch < 1 or self.train.patience < 0:
            raise ConfigError("invalid training schedule")
        if not 0.0 <= self.train.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")

    @property
    def windowed(self) -> bool:
        return self.kind == "lstm"

    @property
    def window(self) -> int:
        return self.lstm.window if self.kind == "lstm" else 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RegressorSpec":
        d = dict(d)
        return cls(
            kind=d.get("kind", "fc_nn"),
            gp=GPSpec(**d.get("gp", {})),
            fc=FCSpec(**d.get("fc", {})),
            lstm=LSTMSpec(**d.get("lstm", {})),
            train=TrainSpec(**d.get("train", {})),
        )

    def replace(self, **sections) -> "RegressorSpec":
        """Copy with per-section field overrides, e.g. ``replace(train={"max_epochs": 5})``."""
        kw = {}
        for name, value in sections.items():
            if name == "kind":
                kw["kind"] = value
            elif isinstance(value, dict):
                kw[name] = dataclasses.replace(getattr(self, name), **value)
            else:
                kw[name] = value
        return dataclasses.replace(self, **kw)
