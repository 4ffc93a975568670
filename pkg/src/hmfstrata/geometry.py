"""Space-time points, parabolic balls, uniform grids and sampled fields.

Everything downstream works on :class:`FieldSnapshot` (one time slice of a
vector field on a uniform grid) and :class:`SpaceTimeField` (an ordered run
of snapshots).  Snapshots are frozen once built; derived arrays (gradient,
energy density, gram matrices) are cached lazily.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import CoverageError, DimensionError, OutOfDomainError

log = logging.getLogger(__name__)

MAX_DIM = 4
MAX_TARGET = 4


def as_point(x, n: Optional[int] = None) -> np.ndarray:
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if p.ndim != 1:
        raise DimensionError("point must be a 1D coordinate vector")
    if n is not None and p.size != n:
        raise DimensionError(f"expected a point in R^{n}, got {p.size} coordinates")
    if not np.all(np.isfinite(p)):
        raise ValueError("point coordinates must be finite")
    return p


@dataclass(frozen=True)
class SpaceTimePoint:
    x: np.ndarray
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", as_point(self.x))
        t = float(self.t)
        if not np.isfinite(t):
            raise ValueError("time must be finite")
        object.__setattr__(self, "t", t)

    @property
    def n(self) -> int:
        return self.x.size


def parabolic_distance(X: SpaceTimePoint, Y: SpaceTimePoint) -> float:
    if X.n != Y.n:
        raise DimensionError(f"dimension mismatch: {X.n} vs {Y.n}")
    dx = X.x - Y.x
    return float(np.sqrt(dx @ dx + abs(X.t - Y.t)))


@dataclass(frozen=True)
class ParabolicBall:
    """Cylinder B_r(x) x (t - r^2, t + r^2)."""

    center: SpaceTimePoint
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def contains(self, Y: SpaceTimePoint) -> bool:
        if Y.n != self.center.n:
            raise DimensionError("dimension mismatch")
        dx = Y.x - self.center.x
        r = self.radius
        return bool(dx @ dx < r * r and abs(Y.t - self.center.t) < r * r)


@dataclass(frozen=True)
class Grid:
    """Uniform axis-aligned grid; ``origin`` is the lowest corner node."""

    origin: np.ndarray
    spacing: float
    counts: tuple

    def __post_init__(self):
        origin = as_point(self.origin)
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != origin.size:
            raise DimensionError("origin and counts disagree on dimension")
        if not 1 <= len(counts) <= MAX_DIM:
            raise DimensionError(f"grid dimension must be in 1..{MAX_DIM}")
        if min(counts) < 3:
            raise ValueError("need at least 3 nodes per axis")
        if not (self.spacing > 0 and np.isfinite(self.spacing)):
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def cube(cls, n: int, nodes: int, lo: float, hi: float) -> "Grid":
        h = (hi - lo) / (nodes - 1)
        return cls(np.full(n, float(lo)), h, (nodes,) * n)

    @classmethod
    def centered(cls, center, half_width: float, nodes: int) -> "Grid":
        """Cube of ``nodes`` per axis whose node lattice is symmetric about ``center``."""
        c = as_point(center)
        h = 2.0 * half_width / (nodes - 1)
        return cls(c - half_width, h, (nodes,) * c.size)

    @property
    def n(self) -> int:
        return len(self.counts)

    @property
    def h(self) -> float:
        return self.spacing

    @property
    def extent(self) -> np.ndarray:
        return self.spacing * (np.asarray(self.counts) - 1)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.extent

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    def axes(self):
        return [self.origin[i] + self.spacing * np.arange(c) for i, c in enumerate(self.counts)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape counts + (n,)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = as_point(x, self.n)
        slack = tol * max(1.0, float(np.max(np.abs(self.extent))))
        return bool(np.all(x >= self.origin - slack) and np.all(x <= self.upper + slack))

    def box_slices(self, center, radius: float):
        """Index slices of the sub-box covering the closed ball B_radius(center)."""
        c = as_point(center, self.n)
        lo = np.ceil((c - radius - self.origin) / self.spacing - 1e-9).astype(int)
        hi = np.floor((c + radius - self.origin) / self.spacing + 1e-9).astype(int)
        lo = np.clip(lo, 0, np.asarray(self.counts) - 1)
        hi = np.clip(hi, -1, np.asarray(self.counts) - 1)
        return tuple(slice(a, b + 1) for a, b in zip(lo, hi))

    def sub_coords(self, slices) -> np.ndarray:
        ax = [a[s] for a, s in zip(self.axes(), slices)]
        return np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)

    def to_header(self) -> dict:
        return {
            "n": self.n,
            "counts": list(self.counts),
            "spacing": self.spacing,
            "origin": [float(v) for v in self.origin],
        }

    def same_as(self, other: "Grid") -> bool:
        return (
            self.counts == other.counts
            and self.spacing == other.spacing
            and np.array_equal(self.origin, other.origin)
        )


def fd_gradient(values: np.ndarray, h: float, n: int, periodic: bool = False) -> np.ndarray:
    """Second-order gradient, shape counts + (n, d).

    Central differences inside, one-sided second order at faces, or wrapped
    central differences when ``periodic``.
    """
    parts = []
    for ax in range(n):
        if periodic:
            g = (np.roll(values, -1, axis=ax) - np.roll(values, 1, axis=ax)) / (2 * h)
        else:
            g = np.gradient(values, h, axis=ax, edge_order=2)
        parts.append(g)
    return np.stack(parts, axis=-2)


class FieldSnapshot:
    """A d-vector field on a grid at one time.

    ``gradient`` and ``dtdu`` may be supplied (for instance exact gradients of
    an analytic map); otherwise the gradient is computed by finite differences
    on first access.
    """

    def __init__(self, grid: Grid, time: float, values, gradient=None, dtdu=None,
                 periodic: bool = False, label: str = ""):
        values = np.array(values, dtype=float, copy=True)
        if values.shape[:-1] != tuple(grid.counts):
            raise DimensionError(f"values shape {values.shape} does not match grid {grid.counts}")
        d = values.shape[-1]
        if not 1 <= d <= MAX_TARGET:
            raise DimensionError(f"target dimension must be in 1..{MAX_TARGET}")
        values.setflags(write=False)
        self.grid = grid
        self.time = float(time)
        self.values = values
        self.periodic = bool(periodic)
        self.label = label
        self._grad = None
        self.gradient_source = "fd"
        if gradient is not None:
            g = np.array(gradient, dtype=float, copy=True)
            if g.shape != values.shape[:-1] + (grid.n, d):
                raise DimensionError("gradient has wrong shape")
            g.setflags(write=False)
            self._grad = g
            self.gradient_source = "supplied"
        self._dtdu = None
        if dtdu is not None:
            v = np.array(dtdu, dtype=float, copy=True)
            if v.shape != values.shape:
                raise DimensionError("time derivative has wrong shape")
            v.setflags(write=False)
            self._dtdu = v
        self._energy = None
        self._gram = None

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def d(self) -> int:
        return self.values.shape[-1]

    @property
    def gradient(self) -> np.ndarray:
        if self._grad is None:
            g = fd_gradient(self.values, self.grid.spacing, self.grid.n, self.periodic)
            g.setflags(write=False)
            self._grad = g
        return self._grad

    @property
    def dtdu(self) -> Optional[np.ndarray]:
        return self._dtdu

    @property
    def energy_density(self) -> np.ndarray:
        """|grad u|^2 per node."""
        if self._energy is None:
            e = np.einsum("...ia,...ia->...", self.gradient, self.gradient)
            e.setflags(write=False)
            self._energy = e
        return self._energy

    @property
    def gram(self) -> np.ndarray:
        """sum_a d_i u^a d_j u^a per node, shape counts + (n, n)."""
        if self._gram is None:
            g = np.einsum("...ia,...ja->...ij", self.gradient, self.gradient)
            g.setflags(write=False)
            self._gram = g
        return self._gram

    def with_values(self, values, time: Optional[float] = None, dtdu=None) -> "FieldSnapshot":
        return FieldSnapshot(self.grid, self.time if time is None else time, values,
                             dtdu=dtdu, periodic=self.periodic, label=self.label)

    def retimed(self, time: float) -> "FieldSnapshot":
        """Same data at another time (arrays shared, they are read-only)."""
        s = object.__new__(FieldSnapshot)
        s.__dict__.update(self.__dict__)
        s.time = float(time)
        return s

    def unit_defect(self) -> float:
        return float(np.max(np.abs(np.linalg.norm(self.values, axis=-1) - 1.0)))

    def __repr__(self):
        return f"FieldSnapshot(t={self.time:g}, counts={self.grid.counts}, d={self.d})"


def sample_field(f: FieldSnapshot, x) -> np.ndarray:
    """Multilinear interpolation of node values at ``x``."""
    g = f.grid
    x = as_point(x, g.n)
    if not g.contains(x):
        raise OutOfDomainError(f"point {x} lies outside the grid box")
    u = (x - g.origin) / g.spacing
    i0 = np.clip(np.floor(u).astype(int), 0, np.asarray(g.counts) - 2)
    frac = np.clip(u - i0, 0.0, 1.0)
    out = np.zeros(f.d)
    for corner in range(2 ** g.n):
        bits = [(corner >> a) & 1 for a in range(g.n)]
        w = 1.0
        for a, b in enumerate(bits):
            w *= frac[a] if b else 1.0 - frac[a]
        if w == 0.0:
            continue
        out += w * f.values[tuple(i0 + np.asarray(bits))]
    return out


class SpaceTimeField:
    """Snapshots on one grid at strictly increasing times."""

    def __init__(self, snapshots: Sequence[FieldSnapshot], monitor=None):
        snaps = list(snapshots)
        if not snaps:
            raise ValueError("need at least one snapshot")
        g0 = snaps[0].grid
        for s in snaps[1:]:
            if not s.grid.same_as(g0):
                raise ValueError("all snapshots must share one grid")
        times = np.array([s.time for s in snaps])
        if np.any(np.diff(times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")
        self.snapshots = snaps
        self.times = times
        self.grid = g0
        self.monitor = monitor if monitor is not None else {}

    @classmethod
    def static(cls, snap: FieldSnapshot, t_start: float, t_end: float) -> "SpaceTimeField":
        """A time-independent field recorded at the two ends of [t_start, t_end]."""
        if not t_end > t_start:
            raise ValueError("need t_end > t_start")
        return cls([snap.retimed(t_start), snap.retimed(t_end)])

    def __len__(self):
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)

    def __getitem__(self, i):
        return self.snapshots[i]

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def require(self, t_lo: float, t_hi: float, what: str = "time range"):
        tol = 1e-12 * max(1.0, abs(t_lo), abs(t_hi))
        if t_lo < self.t_start - tol or t_hi > self.t_end + tol:
            missing = (t_lo, self.t_start) if t_lo < self.t_start - tol else (self.t_end, t_hi)
            raise CoverageError(
                f"{what} [{t_lo:.6g}, {t_hi:.6g}] not covered by recorded times "
                f"[{self.t_start:.6g}, {self.t_end:.6g}]; missing interval "
                f"[{missing[0]:.6g}, {missing[1]:.6g}]",
                missing=missing,
            )

    def index_of(self, t: float, tol: float = 1e-9) -> Optional[int]:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) <= tol * max(1.0, abs(t)):
            return j
        return None

    def bracket(self, t: float):
        """Indices (j0, j1) and weight a with t = (1-a) t_j0 + a t_j1."""
        self.require(t, t)
        j = int(np.searchsorted(self.times, t, side="right")) - 1
        j = min(max(j, 0), len(self.times) - 1)
        if j == len(self.times) - 1 or self.times[j] == t:
            return j, j, 0.0
        a = (t - self.times[j]) / (self.times[j + 1] - self.times[j])
        return j, j + 1, float(a)

    def interpolate(self, attr: str, t: float, slices=None) -> np.ndarray:
        """Linear-in-time interpolation of a per-node array attribute."""
        j0, j1, a = self.bracket(t)
        v0 = getattr(self.snapshots[j0], attr)
        if slices is not None:
            v0 = v0[slices]
        if a == 0.0:
            return v0
        v1 = getattr(self.snapshots[j1], attr)
        if slices is not None:
            v1 = v1[slices]
        return (1.0 - a) * v0 + a * v1

    def time_derivative(self, j: int) -> np.ndarray:
        """Stored du/dt at snapshot j, else a difference quotient between snapshots."""
        s = self.snapshots[j]
        if s.dtdu is not None:
            return s.dtdu
        if len(self.snapshots) == 1:
            return np.zeros_like(s.values)
        if j == 0:
            a, b = 0, 1
        elif j == len(self.snapshots) - 1:
            a, b = j - 1, j
        else:
            a, b = j - 1, j + 1
        return (self.snapshots[b].values - self.snapshots[a].values) / (self.times[b] - self.times[a])
