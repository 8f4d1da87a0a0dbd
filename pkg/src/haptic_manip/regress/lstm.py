"""Stacked LSTM with a ReLU head on the last hidden state; full BPTT.

Gate layout along the 4H axis is [input, forget, cell, output].
"""

from __future__ import annotations

import numpy as np

from .spec import LSTMSpec


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def init_params(rng: np.random.Generator, d_in: int, d_out: int, spec: LSTMSpec) -> dict:
    H = spec.hidden
    params = {}
    fan = d_in
    for layer in range(spec.layers):
        bound = 1.0 / np.sqrt(fan + H)
        params[f"Wx{layer}"] = rng.uniform(-bound, bound, (fan, 4 * H))
        params[f"Wh{layer}"] = rng.uniform(-bound, bound, (H, 4 * H))
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        params[f"b{layer}"] = b
        fan = H
    bound = 1.0 / np.sqrt(H)
    params["Wd"] = rng.uniform(-bound, bound, (H, spec.head_width))
    params["bd"] = np.zeros(spec.head_width)
    bound = 1.0 / np.sqrt(spec.head_width)
    params["Wo"] = rng.uniform(-bound, bound, (spec.head_width, d_out))
    params["bo"] = np.zeros(d_out)
    return params


def weight_names(params: dict) -> list:
    return [k for k in params if k.startswith("W")]


def forward(params: dict, x: np.ndarray, spec: LSTMSpec):
    n, T, _ = x.shape
    H = spec.hidden
    seq = x
    caches = []
    for layer in range(spec.layers):
        Wx, Wh, b = params[f"Wx{layer}"], params[f"Wh{layer}"], params[f"b{layer}"]
        h = np.zeros((n, H))
        c = np.zeros((n, H))
        # input contribution for every step at once, as one 2-d gemm
        xin = (seq.reshape(n * T, -1) @ Wx + b).reshape(n, T, 4 * H)
        out = np.empty((n, T, H))
        steps = []
        for t in range(T):
            z = xin[:, t] + h @ Wh
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = _sigmoid(z[:, 3 * H:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            out[:, t] = h
            steps.append((h_prev, c_prev, i, f, g, o, tc))
        caches.append((seq, steps))
        seq = out
    last = seq[:, -1]
    a = last @ params["Wd"] + params["bd"]
    r = np.maximum(a, 0.0)
    y = r @ params["Wo"] + params["bo"]
    return y, (caches, last, a, r)


def backward(params: dict, cache, dy: np.ndarray, spec: LSTMSpec) -> dict:
    caches, last, a, r = cache
    H = spec.hidden
    grads = {"Wo": r.T @ dy, "bo": dy.sum(axis=0)}
    da = (dy @ params["Wo"].T) * (a > 0)
    grads["Wd"] = last.T @ da
    grads["bd"] = da.sum(axis=0)
    seq_in, _ = caches[-1]
    n, T = seq_in.shape[:2]
    dseq = np.zeros((n, T, H))
    dseq[:, -1] = da @ params["Wd"].T
    for layer in range(spec.layers - 1, -1, -1):
        Wx, Wh = params[f"Wx{layer}"], params[f"Wh{layer}"]
        xs, steps = caches[layer]
        dz_all = np.empty((n, T, 4 * H))
        dWh = np.zeros_like(Wh)
        dh_next = np.zeros((n, H))
        dc_next = np.zeros((n, H))
        for t in range(T - 1, -1, -1):
            h_prev, c_prev, i, f, g, o, tc = steps[t]
            dh = dseq[:, t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc**2)
            dz = np.concatenate(
                [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), dc * i * (1.0 - g**2), do * o * (1.0 - o)],
                axis=1,
            )
            dz_all[:, t] = dz
            dWh += h_prev.T @ dz
            dh_next = dz @ Wh.T
            dc_next = dc * f
        flat = dz_all.reshape(n * T, 4 * H)
        grads[f"Wx{layer}"] = xs.reshape(n * T, -1).T @ flat
        grads[f"Wh{layer}"] = dWh
        grads[f"b{layer}"] = flat.sum(axis=0)
        dseq = (flat @ Wx.T).reshape(n, T, -1)
    return grads


def loss_and_grad(params: dict, x, y, spec: LSTMSpec, l2: float = None):
    l2 = spec.l2 if l2 is None else l2
    pred, cache = forward(params, x, spec)
    diff = pred - y
    loss = float(np.mean(diff**2))
    grads = backward(params, cache, 2.0 * diff / diff.size, spec)
    for name in weight_names(params):
        loss += l2 * float(np.sum(params[name] ** 2))
        grads[name] = grads[name] + 2.0 * l2 * params[name]
    return loss, grads
