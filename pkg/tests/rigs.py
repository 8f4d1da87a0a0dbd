"""Hand-built regressors and datasets with known contents, for oracle tests."""

import numpy as np

from haptic_manip import datagen
from haptic_manip.datagen import EpisodeDataset, Normalizer, Record
from haptic_manip.handsim import Pose, SensorReading
from haptic_manip.regress import FCSpec, RegressorSpec, TrainedRegressor


def identity_norm(d):
    return Normalizer(np.zeros(d), np.ones(d))


def affine(W, b, output="linear"):
    """fc_nn with no hidden layer: y = x @ W + b (softplus-mapped if asked)."""
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float)
    d_in, d_out = W.shape
    spec = RegressorSpec(kind="fc_nn", fc=FCSpec(layers=0, dropout=0.0, output=output))
    return TrainedRegressor(spec, {"W0": W, "b0": b}, identity_norm(d_in), identity_norm(d_out), d_in, d_out)


def constant(d_in, value, output="linear"):
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return affine(np.zeros((d_in, len(value))), value, output)


def dense_gp(X, Y, q, ls, sf, sn):
    """Plain closed-form GP mean with a direct dense solve."""
    def k(a, b):
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
        return sf**2 * np.exp(-0.5 * d2 / ls**2)

    K = k(X, X) + max(sn**2, 1e-12 * sf**2) * np.eye(len(X))
    return k(q, X) @ np.linalg.solve(K, Y)


def inv3(M):
    """Explicit 3x3 inverse by cofactors."""
    a, b, c = M[0]
    d, e, f = M[1]
    g, h, i = M[2]
    cof = np.array([
        [e * i - f * h, -(d * i - f * g), d * h - e * g],
        [-(b * i - c * h), a * i - c * g, -(a * h - b * g)],
        [b * f - c * e, -(a * f - c * d), a * e - b * d],
    ])
    det = a * cof[0, 0] + b * cof[0, 1] + c * cof[0, 2]
    return cof.T / det


def synthetic(n_episodes, per=3, seed=0, pose=None):
    """Random records; every truth pose equals ``pose`` when given."""
    rng = np.random.default_rng(seed)
    recs = []
    for e in range(n_episodes):
        init = Pose(*map(datagen.r9, rng.normal(size=3)))
        for t in range(per):
            v = [datagen.r9(x) for x in rng.normal(size=11)]
            truth = pose or Pose(v[6], v[7], v[8])
            recs.append(Record(e, t, SensorReading((v[0], v[1]), (v[2], v[3]), (v[4], v[5]), truth),
                               (v[9], v[10]), init, t == per - 1))
    return EpisodeDataset(recs, {"version": datagen.FORMAT_VERSION, "n_records": len(recs)})
