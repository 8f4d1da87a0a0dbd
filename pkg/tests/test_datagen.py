import json
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from haptic_manip import datagen, handsim
from haptic_manip.datagen import SplitPolicy
from haptic_manip.errors import InsufficientEpisodes, MalformedRow, VersionMismatch

from conftest import STAMP
from rigs import synthetic


# --- features --------------------------------------------------------------------------

def test_combination_dimensions():
    dims = {1: 2, 2: 2, 3: 4, 4: 2, 5: 4, 6: 4, 7: 6, 8: 7, 9: 9}
    assert {c: datagen.combination(c).dim for c in dims} == dims


def test_combination_membership():
    assert datagen.combination(1).members == {"loads"}
    assert datagen.combination(2).members == {"tactile"}
    assert datagen.combination(7).members == {"angles", "loads", "tactile"}
    assert datagen.combination(9).members == {"angles", "loads", "tactile", "initial_pose"}


def test_features_layout(small_data):
    r = small_data.records[5]
    s = r.sensor
    assert np.array_equal(datagen.extract_features(r, 7), [*s.enc_angles, *s.loads, *s.tactile])
    assert np.array_equal(datagen.extract_features(r, 1), s.loads)
    f9 = datagen.extract_features(r, 9)
    first = small_data.episodes()[r.episode_id][0].sensor.truth_pose
    assert len(f9) == 9 and np.array_equal(f9[-3:], first.as_array())


# --- collection ------------------------------------------------------------------------

def test_collect_byte_deterministic(tmp_path):
    for name in ("a", "b"):
        d = datagen.collect(handsim.HandConfig(), handsim.OBJECTS["circ15"], 1, 60, seed=9, timestamp=STAMP)
        datagen.write(d, tmp_path / name)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_collect_independent_of_jobs():
    kw = dict(n_episodes=3, max_steps=40, seed=2, timestamp=STAMP)
    a = datagen.collect(handsim.HandConfig(), handsim.OBJECTS["circ15"], **kw)
    b = datagen.collect(handsim.HandConfig(), handsim.OBJECTS["circ15"], jobs=2, **kw)
    assert a.records == b.records


def test_episode_invariants(small_data):
    cap = small_data.manifest["max_steps"]
    assert small_data.manifest["n_records"] == len(small_data)
    for recs in small_data.episodes().values():
        assert [r.t for r in recs] == list(range(len(recs)))
        assert len({r.initial_pose for r in recs}) == 1
        assert recs[0].initial_pose == recs[0].sensor.truth_pose
        assert recs[-1].dropped or recs[-1].t == cap - 1
        assert not any(r.dropped for r in recs[:-1])


def test_min_records_extends_collection():
    d = datagen.collect(handsim.HandConfig(), handsim.OBJECTS["circ15"], 1, 30, seed=1, min_records=70,
                        timestamp=STAMP)
    assert len(d) >= 70 and d.manifest["n_episodes"] >= 3


# --- splits ----------------------------------------------------------------------------

def test_split_counts():
    train, test, hold = datagen.split(synthetic(100, per=1), SplitPolicy(0.1, 0.15))
    assert (len(test.episode_ids()), len(hold.episode_ids()), len(train.episode_ids())) == (10, 15, 75)


def test_split_zero_test():
    d = synthetic(20, per=1)
    train, test, hold = datagen.split(d, SplitPolicy(0.0, 0.15))
    assert len(test) == 0
    assert set(train.episode_ids()) | set(hold.episode_ids()) == set(d.episode_ids())


@given(n=st.integers(3, 60), t=st.floats(0, 0.4), h=st.floats(0, 0.4))
def test_split_is_partition(n, t, h):
    d = synthetic(n, per=1)
    try:
        parts = datagen.split(d, SplitPolicy(t, h))
    except InsufficientEpisodes:
        assert int(t * n + 1e-9) + int(h * n + 1e-9) >= n
        return
    ids = [set(p.episode_ids()) for p in parts]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert set.union(*ids) == set(d.episode_ids())


def test_split_insufficient():
    with pytest.raises(InsufficientEpisodes):
        datagen.split(synthetic(2, per=1), SplitPolicy(1, 1))


# --- normalizer ------------------------------------------------------------------------

@given(seed=st.integers(0, 1000), d=st.integers(1, 6))
def test_normalizer_round_trip(seed, d):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(50, d)) * rng.uniform(0.1, 100, d) + rng.normal(size=d) * 10
    n = datagen.fit_normalizer(x)
    assert np.allclose(n.invert(n.apply(x)), x, atol=1e-12 * max(1.0, np.abs(x).max()), rtol=0)
    z = n.apply(x)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(z.std(axis=0) - 1) < 1e-9)


def test_normalizer_constant_dimension():
    x = np.column_stack([np.full(10, 3.5), np.arange(10.0)])
    n = datagen.fit_normalizer(x)
    assert n.std[0] == 1.0
    assert np.all(n.apply(x)[:, 0] == 0.0)
    assert datagen.Normalizer.from_dict(json.loads(json.dumps(n.to_dict()))).std.tolist() == n.std.tolist()


# --- serialisation ---------------------------------------------------------------------

def test_write_read_round_trip(tmp_path, small_data):
    datagen.write(small_data, tmp_path / "d")
    back = datagen.read(tmp_path / "d")
    assert back.records == small_data.records
    assert back.manifest["n_records"] == len(small_data)


def test_manifest_count_mismatch(tmp_path):
    d = datagen.write(synthetic(3), tmp_path / "d")
    m = json.loads((d / "manifest.json").read_text())
    m["n_records"] += 1
    (d / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(MalformedRow):
        datagen.read(d)


def test_version_mismatch(tmp_path):
    d = datagen.write(synthetic(2), tmp_path / "d")
    m = json.loads((d / "manifest.json").read_text())
    m["version"] = "99"
    (d / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(VersionMismatch):
        datagen.read(d)


def test_malformed_row_reports_index(tmp_path):
    d = datagen.write(synthetic(2, per=4), tmp_path / "d")
    f = d / "episodes" / "ep00001.csv"
    lines = f.read_text().splitlines()
    lines[3] = lines[3].replace(",", ",oops,", 1)
    f.write_text("\n".join(lines) + "\n")
    with pytest.raises(MalformedRow) as exc:
        datagen.read(d)
    assert exc.value.row == 3


def test_read_twenty_thousand_records_fast(tmp_path):
    d = datagen.write(synthetic(100, per=200), tmp_path / "d")
    t0 = time.perf_counter()
    back = datagen.read(d)
    assert time.perf_counter() - t0 < 2.0
    assert len(back) == 20_000
