"""TrainedRegressor plus the shared trainer (Adam, MSE, dropout, L2, early stopping)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..datagen import Normalizer, fit_normalizer
from ..errors import DimensionMismatch, EmptyData, NonFiniteLoss
from . import lstm, mlp
from .adam import Adam
from .gp import LocalGP, grid_search
from .spec import RegressorSpec


@dataclass
class TrainedRegressor:
    spec: RegressorSpec
    params: dict
    in_norm: Normalizer
    out_norm: Normalizer
    d_in: int
    d_out: int
    history: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    _gp: Optional[LocalGP] = field(default=None, repr=False, compare=False)

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def window(self) -> int:
        return self.spec.window

    @property
    def gp(self) -> LocalGP:
        if self._gp is None:
            self._gp = LocalGP(self.params["X"], self.params["Y"], self.spec.gp)
        return self._gp


class EarlyStopping:
    """Tracks the best validation loss; ``stop`` once ``patience`` epochs pass without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = None
        self.bad = 0

    def update(self, loss: float, epoch: int) -> bool:
        """Returns True if this epoch is a new best."""
        if loss < self.best:
            self.best, self.best_epoch, self.bad = loss, epoch, 0
            return True
        self.bad += 1
        return False

    @property
    def stop(self) -> bool:
        return self.bad >= self.patience


def _prepare(spec: RegressorSpec, inputs, targets):
    X = np.asarray(inputs, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.size == 0 or Y.size == 0 or len(X) == 0:
        raise EmptyData("fit needs at least one (input, target) pair")
    if len(X) != len(Y):
        raise DimensionMismatch(f"{len(X)} inputs vs {len(Y)} targets")
    if Y.ndim == 1:
        Y = Y[:, None]
    want = 3 if spec.windowed else 2
    if X.ndim != want:
        raise DimensionMismatch(f"{spec.kind} expects {want}-d input arrays, got shape {X.shape}")
    if spec.windowed and X.shape[1] != spec.window:
        raise DimensionMismatch(f"window length {X.shape[1]} != spec window {spec.window}")
    return X, Y


def _init(spec: RegressorSpec, rng, d_in, d_out) -> dict:
    if spec.kind == "lstm":
        return lstm.init_params(rng, d_in, d_out, spec.lstm)
    return mlp.init_params(rng, d_in, d_out, spec.fc)


def _loss_grad(spec: RegressorSpec, params, x, y, rng=None):
    if spec.kind == "lstm":
        return lstm.loss_and_grad(params, x, y, spec.lstm)
    masks = mlp.make_masks(rng, len(x), spec.fc) if rng is not None else None
    return mlp.loss_and_grad(params, x, y, spec.fc, masks)


def _forward(spec: RegressorSpec, params, x):
    if spec.kind == "lstm":
        return lstm.forward(params, x, spec.lstm)[0]
    return mlp.forward(params, x, spec.fc)[0]


def _mse(spec, params, x, y) -> float:
    if len(x) == 0:
        return float("nan")
    out = np.concatenate([_forward(spec, params, x[s:s + 1024]) for s in range(0, len(x), 1024)])
    return float(np.mean((out - y) ** 2))


def fit(spec: RegressorSpec, inputs, targets,
        evaluator: Optional[Callable[[int, dict], float]] = None) -> TrainedRegressor:
    """Fit a regressor.

    ``inputs`` is (n, d) for local_gp/fc_nn and (n, w, d) for lstm. ``evaluator(epoch, params)``
    overrides the validation loss used for early stopping for epochs >= 1. The history always
    starts with an epoch-0 entry for the initial parameters; early stopping tracks epochs >= 1.
    """
    X, Y = _prepare(spec, inputs, targets)
    d_in, d_out = X.shape[-1], Y.shape[1]
    in_norm = fit_normalizer(X.reshape(-1, d_in))
    out_norm = fit_normalizer(Y, center=spec.fc.output != "softplus" or spec.kind != "fc_nn")
    Xn, Yn = in_norm.apply(X), out_norm.apply(Y)
    rng = np.random.default_rng(spec.train.seed)

    if spec.kind == "local_gp":
        gp = spec.gp
        if gp.optimize:
            gp = grid_search(Xn, Yn, gp, rng)
            spec = dataclasses.replace(spec, gp=gp)
        params = {"X": Xn, "Y": Yn}
        return TrainedRegressor(spec, params, in_norm, out_norm, d_in, d_out, history=[])

    n = len(X)
    n_val = int(np.floor(spec.train.val_fraction * n)) if n > 1 else 0
    perm = rng.permutation(n)
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    Xtr, Ytr = Xn[tr_idx], Yn[tr_idx]
    Xva, Yva = (Xn[val_idx], Yn[val_idx]) if n_val else (Xtr, Ytr)

    params = _init(spec, rng, d_in, d_out)

    def val_loss(epoch, p):
        return _mse(spec, p, Xva, Yva)

    evaluate = evaluator or val_loss
    history = [{"epoch": 0, "train": _mse(spec, params, Xtr, Ytr), "val": val_loss(0, params)}]
    if spec.train.max_epochs == 0:
        return TrainedRegressor(spec, params, in_norm, out_norm, d_in, d_out, history)

    opt = Adam(params, lr=spec.train.lr)
    stopper = EarlyStopping(spec.train.patience)
    best = {k: v.copy() for k, v in params.items()}
    batch = spec.train.batch
    for epoch in range(1, spec.train.max_epochs + 1):
        order = rng.permutation(len(Xtr))
        total = 0.0
        for s in range(0, len(order), batch):
            b = order[s:s + batch]
            loss, grads = _loss_grad(spec, params, Xtr[b], Ytr[b], rng)
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch)
            opt.step(params, grads)
            total += loss * len(b)
        v = float(evaluate(epoch, params))
        history.append({"epoch": epoch, "train": total / len(order), "val": v})
        if not np.isfinite(v):
            raise NonFiniteLoss(epoch)
        if stopper.update(v, epoch):
            best = {k: p.copy() for k, p in params.items()}
        if stopper.stop:
            break
    return TrainedRegressor(spec, best, in_norm, out_norm, d_in, d_out, history, stopper.best_epoch)


def _batch_input(model: TrainedRegressor, x):
    x = np.asarray(x, dtype=float)
    core = 2 if model.spec.windowed else 1
    single = x.ndim == core
    if single:
        x = x[None]
    if x.ndim != core + 1 or x.shape[-1] != model.d_in or (model.spec.windowed and x.shape[1] != model.window):
        want = f"(w={model.window}, d={model.d_in})" if model.spec.windowed else f"(d={model.d_in},)"
        raise DimensionMismatch(f"input shape {x.shape[-core:]} does not match model input {want}")
    return x, single


def predict(model: TrainedRegressor, x) -> np.ndarray:
    """Deterministic prediction for one input (vector/window) or a batch of them."""
    xb, single = _batch_input(model, x)
    xn = model.in_norm.apply(xb)
    if model.kind == "local_gp":
        yn = model.gp.posterior(xn)[0]
    else:
        yn = np.concatenate([_forward(model.spec, model.params, xn[s:s + 1024])
                             for s in range(0, len(xn), 1024)]) if len(xn) else np.empty((0, model.d_out))
    y = model.out_norm.invert(yn)
    return y[0] if single else y


def predict_variance(model: TrainedRegressor, x) -> np.ndarray:
    """GP posterior (latent) variance, scaled to each output dimension's units."""
    if model.kind != "local_gp":
        raise TypeError("posterior variance is only defined for local_gp models")
    xb, single = _batch_input(model, x)
    var = model.gp.posterior(model.in_norm.apply(xb))[1]
    out = var[:, None] * model.out_norm.std[None, :] ** 2
    return out[0] if single else out


def analytic_gradient(spec: RegressorSpec, params: dict, x, y, masks=None):
    if spec.kind == "lstm":
        return lstm.loss_and_grad(params, x, y, spec.lstm)
    return mlp.loss_and_grad(params, x, y, spec.fc, masks)


def small_spec(spec: RegressorSpec) -> RegressorSpec:
    """Shrink a spec to a finite-difference-sized instance (widths <= 16, w <= 4)."""
    return spec.replace(
        fc={"width": min(spec.fc.width, 16)},
        lstm={"hidden": min(spec.lstm.hidden, 8), "head_width": min(spec.lstm.head_width, 8),
              "window": min(spec.lstm.window, 4)},
    )


def grad_check(spec: RegressorSpec, seed: int = 0, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients of MSE + L2."""
    if spec.kind not in ("fc_nn", "lstm"):
        raise ValueError("grad_check applies to fc_nn and lstm")
    spec = small_spec(spec)
    rng = np.random.default_rng(seed)
    d_in, d_out, n = 3, 2, 5
    shape = (n, spec.window, d_in) if spec.windowed else (n, d_in)
    x = rng.normal(size=shape)
    y = rng.normal(size=(n, d_out))
    params = _init(spec, rng, d_in, d_out)
    for k in params:  # nonzero biases exercise every path
        params[k] = params[k] + 0.1 * rng.normal(size=params[k].shape)
    masks = mlp.make_masks(rng, n, spec.fc) if spec.kind == "fc_nn" else None
    _, grads = analytic_gradient(spec, params, x, y, masks)
    l2 = spec.lstm.l2 if spec.kind == "lstm" else spec.fc.l2

    def out(p):
        if spec.kind == "lstm":
            return lstm.forward(p, x, spec.lstm)[0]
        return mlp.forward(p, x, spec.fc, masks)[0]

    worst = 0.0
    for name, p in params.items():
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            yp = out(params)
            p[i] = old - h
            ym = out(params)
            p[i] = old
            # L(+) - L(-) expanded so identical terms cancel exactly instead of through roundoff
            diff = np.sum((yp - ym) * (yp + ym - 2 * y)) / y.size
            if name.startswith("W"):
                diff += l2 * ((old + h) ** 2 - (old - h) ** 2)
            num = diff / (2 * h)
            g = grads[name][i]
            worst = max(worst, abs(g - num) / max(abs(g), 1e-8))
    return float(worst)
