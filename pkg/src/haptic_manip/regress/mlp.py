"""Fully-connected ReLU network with inverted dropout, hand-written backprop."""

from __future__ import annotations

import numpy as np

from .spec import FCSpec


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def init_params(rng: np.random.Generator, d_in: int, d_out: int, fc: FCSpec) -> dict:
    params = {}
    sizes = [d_in] + [fc.width] * fc.layers + [d_out]
    for k in range(len(sizes) - 1):
        bound = np.sqrt(6.0 / sizes[k]) if k < fc.layers else 1.0 / np.sqrt(sizes[k])
        params[f"W{k}"] = rng.uniform(-bound, bound, (sizes[k], sizes[k + 1]))
        params[f"b{k}"] = np.zeros(sizes[k + 1])
    return params


def weight_names(params: dict) -> list:
    return [k for k in params if k.startswith("W")]


def make_masks(rng: np.random.Generator, n: int, fc: FCSpec) -> list:
    if fc.dropout <= 0:
        return None
    keep = 1.0 - fc.dropout
    return [(rng.random((n, fc.width)) < keep) / keep for _ in range(fc.layers)]


def forward(params: dict, x: np.ndarray, fc: FCSpec, masks=None):
    acts = [x]
    pre = []
    h = x
    for k in range(fc.layers):
        z = h @ params[f"W{k}"] + params[f"b{k}"]
        pre.append(z)
        h = np.maximum(z, 0.0)
        if masks is not None:
            h = h * masks[k]
        acts.append(h)
    out = h @ params[f"W{fc.layers}"] + params[f"b{fc.layers}"]
    pre.append(out)
    y = _softplus(out) if fc.output == "softplus" else out
    return y, (acts, pre, masks)


def backward(params: dict, cache, dy: np.ndarray, fc: FCSpec) -> dict:
    acts, pre, masks = cache
    grads = {}
    L = fc.layers
    d = dy * _sigmoid(pre[L]) if fc.output == "softplus" else dy
    for k in range(L, -1, -1):
        grads[f"W{k}"] = acts[k].T @ d
        grads[f"b{k}"] = d.sum(axis=0)
        if k == 0:
            break
        dh = d @ params[f"W{k}"].T
        if masks is not None:
            dh = dh * masks[k - 1]
        d = dh * (pre[k - 1] > 0)
    return grads


def loss_and_grad(params: dict, x, y, fc: FCSpec, masks=None, l2: float = None):
    """Mean squared error plus ``l2 * sum ||W||^2`` and its gradient."""
    l2 = fc.l2 if l2 is None else l2
    pred, cache = forward(params, x, fc, masks)
    diff = pred - y
    loss = float(np.mean(diff**2))
    grads = backward(params, cache, 2.0 * diff / diff.size, fc)
    for name in weight_names(params):
        loss += l2 * float(np.sum(params[name] ** 2))
        grads[name] = grads[name] + 2.0 * l2 * params[name]
    return loss, grads
