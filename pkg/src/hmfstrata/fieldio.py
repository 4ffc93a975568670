"""Binary field container, trajectory folders and CSV helpers.

Container layout (all little-endian, 8 bytes per entry):

    b"STRF" | version i64 | n i64 | d i64 | counts n*i64 | spacing f64 |
    time f64 | origin n*f64 | values f64 row-major (counts..., d)

A JSON sidecar ``<name>.json`` repeats the header fields.
"""
from __future__ import annotations

import csv
import json
import os
import struct
from pathlib import Path

import numpy as np

from .geometry import FieldSnapshot, Grid, SpaceTimeField

MAGIC = b"STRF"
VERSION = 1
FLOAT_FMT = "%.17g"


def fmt(v) -> str:
    return FLOAT_FMT % float(v)


def write_snapshot(path, snap: FieldSnapshot) -> Path:
    path = Path(path)
    g = snap.grid
    head = MAGIC + struct.pack("<qqq", VERSION, g.n, snap.d)
    head += struct.pack(f"<{g.n}q", *g.counts)
    head += struct.pack("<dd", g.spacing, snap.time)
    head += struct.pack(f"<{g.n}d", *g.origin)
    payload = np.ascontiguousarray(snap.values, dtype="<f8").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(payload)
    side = {
        "magic": MAGIC.decode(),
        "version": VERSION,
        "n": g.n,
        "d": snap.d,
        "counts": list(g.counts),
        "spacing": g.spacing,
        "time": snap.time,
        "origin": [float(v) for v in g.origin],
        "byte_order": "little",
        "payload_offset": len(head),
    }
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(side, fh, indent=1, sort_keys=True)
    return path


def read_snapshot(path, periodic: bool = False) -> FieldSnapshot:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a field container (bad magic)")
    off = 4
    version, n, d = struct.unpack_from("<qqq", raw, off)
    off += 24
    if version != VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    counts = struct.unpack_from(f"<{n}q", raw, off)
    off += 8 * n
    spacing, time = struct.unpack_from("<dd", raw, off)
    off += 16
    origin = struct.unpack_from(f"<{n}d", raw, off)
    off += 8 * n
    vals = np.frombuffer(raw, dtype="<f8", offset=off)
    expect = int(np.prod(counts)) * d
    if vals.size != expect:
        raise ValueError(f"{path}: payload has {vals.size} values, expected {expect}")
    grid = Grid(np.array(origin), spacing, tuple(counts))
    return FieldSnapshot(grid, time, vals.reshape(tuple(counts) + (d,)), periodic=periodic)


def write_trajectory(folder, field: SpaceTimeField, extra: dict | None = None) -> Path:
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(field):
        name = f"snap_{i:05d}.strf"
        write_snapshot(folder / name, s)
        entries.append({"file": name, "time": s.time})
    index = {
        "snapshots": entries,
        "periodic": bool(field[0].periodic),
        "grid": field.grid.to_header(),
        "monitor": {k: [float(v) for v in np.ravel(a)] for k, a in field.monitor.items()},
    }
    if extra:
        index.update(extra)
    tmp = folder / "index.json.tmp"
    with open(tmp, "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
    os.replace(tmp, folder / "index.json")
    return folder / "index.json"


def read_trajectory(folder) -> SpaceTimeField:
    folder = Path(folder)
    with open(folder / "index.json") as fh:
        index = json.load(fh)
    per = bool(index.get("periodic", False))
    snaps = [read_snapshot(folder / e["file"], periodic=per) for e in index["snapshots"]]
    mon = {k: np.asarray(v) for k, v in index.get("monitor", {}).items()}
    return SpaceTimeField(snaps, monitor=mon)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else fmt(v))
                        for v in row])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [row for row in r]
    return header, rows
