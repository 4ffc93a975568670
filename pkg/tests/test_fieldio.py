import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmfstrata.fieldio import (MAGIC, fmt, read_csv, read_snapshot, read_trajectory, write_csv, write_snapshot,
                               write_trajectory)
from hmfstrata.geometry import FieldSnapshot, Grid, SpaceTimeField


def snapshot(seed, n=2, d=3, counts=(5, 4), t=0.25):
    g = Grid(np.arange(n) * -0.5, 0.1, counts)
    vals = np.random.default_rng(seed).normal(size=tuple(counts) + (d,))
    return FieldSnapshot(g, t, vals)


def test_fmt_round_trips():
    assert fmt(0.1) == "0.10000000000000001"
    for v in (1 / 3, 1e-300, -2.5e17, np.pi):
        assert float(fmt(v)) == v


def test_snapshot_roundtrip_and_sidecar(tmp_path):
    s = snapshot(0)
    path = write_snapshot(tmp_path / "a.strf", s)
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    back = read_snapshot(path)
    assert np.array_equal(back.values, s.values)
    assert back.time == s.time and back.grid.spacing == s.grid.spacing
    assert np.array_equal(back.grid.origin, s.grid.origin) and back.grid.counts == s.grid.counts
    side = json.loads((tmp_path / "a.json").read_text())
    assert side["magic"] == "STRF" and side["counts"] == [5, 4] and side["d"] == 3
    assert side["payload_offset"] + s.values.size * 8 == len(raw)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 3), st.integers(1, 4))
def test_snapshot_roundtrip_property(tmp_path_factory, seed, n, d):
    counts = tuple([3 + (seed >> i) % 3 for i in range(n)])
    s = snapshot(seed, n=n, d=d, counts=counts, t=seed * 1e-3)
    path = write_snapshot(tmp_path_factory.mktemp("s") / "x.strf", s)
    back = read_snapshot(path)
    assert np.array_equal(back.values, s.values) and back.time == s.time


def test_snapshot_corruption(tmp_path):
    path = write_snapshot(tmp_path / "a.strf", snapshot(1))
    raw = bytearray(path.read_bytes())
    (tmp_path / "bad.strf").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        read_snapshot(tmp_path / "bad.strf")
    (tmp_path / "short.strf").write_bytes(bytes(raw[:-8]))
    with pytest.raises(ValueError, match="payload"):
        read_snapshot(tmp_path / "short.strf")


def test_trajectory_roundtrip(tmp_path):
    snaps = [snapshot(i, t=0.1 * i) for i in range(3)]
    f = SpaceTimeField(snaps, monitor={"max_grad": np.array([1.0, 2.0, 3.0])})
    write_trajectory(tmp_path / "traj", f, extra={"note": "x"})
    back = read_trajectory(tmp_path / "traj")
    assert [s.time for s in back] == [0.0, 0.1, 0.2]
    assert all(np.array_equal(a.values, b.values) for a, b in zip(f, back))
    assert np.array_equal(back.monitor["max_grad"], [1.0, 2.0, 3.0])
    assert json.loads((tmp_path / "traj" / "index.json").read_text())["note"] == "x"


def test_csv_roundtrip(tmp_path):
    write_csv(tmp_path / "t.csv", ["a", "b", "c"], [[1, 0.1, "x"], [np.int64(2), 1 / 3, "y"]])
    head, rows = read_csv(tmp_path / "t.csv")
    assert head == ["a", "b", "c"]
    assert rows[0] == ["1", "0.10000000000000001", "x"]
    assert float(rows[1][1]) == 1 / 3
