"""Versioned model container: a .npz archive holding arrays plus a JSON ``meta`` entry."""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

from ..datagen import Normalizer
from ..errors import CorruptModel, SpecMismatch
from .model import TrainedRegressor
from .spec import RegressorSpec

CONTAINER_VERSION = 1


def save(model: TrainedRegressor, path, extra: dict = None) -> Path:
    """Write ``model``; ``extra`` is a JSON-able dict stored alongside (see :func:`read_extra`)."""
    path = Path(path)
    meta = {
        "container_version": CONTAINER_VERSION,
        "spec": model.spec.to_dict(),
        "d_in": model.d_in,
        "d_out": model.d_out,
        "history": model.history,
        "best_epoch": model.best_epoch,
        "shapes": {k: list(v.shape) for k, v in model.params.items()},
        "extra": extra or {},
    }
    arrays = {f"p_{k}": v for k, v in model.params.items()}
    arrays.update(in_mean=model.in_norm.mean, in_std=model.in_norm.std,
                  out_mean=model.out_norm.mean, out_std=model.out_norm.std)
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def _read(path: Path):
    try:
        with np.load(path, allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
        meta = json.loads(bytes(data.pop("meta")).decode())
    except FileNotFoundError:
        raise
    except (zipfile.BadZipFile, ValueError, KeyError, OSError, EOFError, UnicodeDecodeError) as exc:
        raise CorruptModel(f"{path}: unreadable model container ({exc})") from exc
    return data, meta


def read_extra(path) -> dict:
    return _read(Path(path))[1].get("extra", {})


def load(path, expect: RegressorSpec = None) -> TrainedRegressor:
    """Load a container; ``expect`` (if given) must match the stored spec or SpecMismatch is raised."""
    path = Path(path)
    data, meta = _read(path)
    if meta.get("container_version") != CONTAINER_VERSION:
        raise CorruptModel(f"{path}: unsupported container version {meta.get('container_version')!r}")
    try:
        spec = RegressorSpec.from_dict(meta["spec"])
        params = {k[2:]: data[k] for k in data if k.startswith("p_")}
        in_norm = Normalizer(data["in_mean"], data["in_std"])
        out_norm = Normalizer(data["out_mean"], data["out_std"])
    except (KeyError, TypeError) as exc:
        raise CorruptModel(f"{path}: missing field {exc}") from exc
    if {k: list(v.shape) for k, v in params.items()} != meta["shapes"]:
        raise CorruptModel(f"{path}: parameter shapes disagree with the header")
    if expect is not None and expect.to_dict() != spec.to_dict():
        raise SpecMismatch(f"{path}: stored spec {spec.to_dict()} differs from expected {expect.to_dict()}")
    _check_shapes(spec, params, meta["d_in"], meta["d_out"], path)
    return TrainedRegressor(spec, params, in_norm, out_norm, meta["d_in"], meta["d_out"],
                            meta["history"], meta.get("best_epoch"))


def _check_shapes(spec: RegressorSpec, params, d_in, d_out, path):
    if spec.kind == "local_gp":
        want = {"X": (None, d_in), "Y": (None, d_out)}
    elif spec.kind == "fc_nn":
        sizes = [d_in] + [spec.fc.width] * spec.fc.layers + [d_out]
        want = {}
        for k in range(len(sizes) - 1):
            want[f"W{k}"] = (sizes[k], sizes[k + 1])
            want[f"b{k}"] = (sizes[k + 1],)
    else:
        H = spec.lstm.hidden
        want = {}
        fan = d_in
        for layer in range(spec.lstm.layers):
            want.update({f"Wx{layer}": (fan, 4 * H), f"Wh{layer}": (H, 4 * H), f"b{layer}": (4 * H,)})
            fan = H
        want.update(Wd=(H, spec.lstm.head_width), bd=(spec.lstm.head_width,),
                    Wo=(spec.lstm.head_width, d_out), bo=(d_out,))
    if set(want) != set(params):
        raise SpecMismatch(f"{path}: parameters {sorted(params)} do not fit a {spec.kind} spec")
    for k, shp in want.items():
        got = params[k].shape
        if len(got) != len(shp) or any(w is not None and w != g for w, g in zip(shp, got)):
            raise SpecMismatch(f"{path}: parameter {k} has shape {got}, spec implies {shp}")
