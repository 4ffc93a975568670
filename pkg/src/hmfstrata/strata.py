"""Singular-set detection, quantitative strata, Minkowski contents and weak norms."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .densities import INSIDE, ball_offsets, ball_sum, band_nodes
from .geometry import SpaceTimeField, SpaceTimePoint

log = logging.getLogger(__name__)


@dataclass
class DetectionParams:
    """Thresholds and scale ladder for the detectors.

    ``r_min``/``r_max`` default to h/2 and 8 h/2 of the analysed grid.
    ``epsilon`` is the small-energy threshold on the backward density,
    ``thresholds`` maps k to the normalised symmetry-defect threshold.
    """

    epsilon: float = 1.0
    r_min: Optional[float] = None
    r_max: Optional[float] = None
    ratio: float = 2.0
    thresholds: dict = field(default_factory=dict)
    default_threshold: float = 0.1
    time_nodes: int = 5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.ratio > 1:
            raise ValueError("ladder ratio must exceed 1")
        if self.r_min is not None and self.r_max is not None and not 0 < self.r_min < self.r_max:
            raise ValueError("need 0 < r_min < r_max")

    def ladder(self, h: float) -> np.ndarray:
        lo = 0.5 * h if self.r_min is None else self.r_min
        hi = 8 * lo if self.r_max is None else self.r_max
        m = int(math.floor(math.log(hi / lo) / math.log(self.ratio) + 1e-9))
        return lo * self.ratio ** np.arange(m + 1)

    def threshold(self, k: int) -> float:
        return float(self.thresholds.get(k, self.thresholds.get(str(k), self.default_threshold)))


@dataclass
class StratumSample:
    t: float
    k: int
    points: np.ndarray
    mask: np.ndarray
    ladder: list
    meta: dict = field(default_factory=dict)


@dataclass
class ContentReport:
    alpha: float
    r: float
    content: float
    flavor: str
    resolution: float
    volume: float


# -- regularity scale ------------------------------------------------------

def default_scale_ladder(h: float, top: float = 1.0, per_octave: int = 4) -> np.ndarray:
    """Geometric radii from ``top`` down to h/2, ``per_octave`` values per factor 2."""
    m = int(math.floor(per_octave * math.log2(top / (0.5 * h)) + 1e-9))
    return top * 2.0 ** (-np.arange(m + 1) / per_octave)


def regularity_scale(field: SpaceTimeField, X: SpaceTimePoint, ladder: Optional[Sequence[float]] = None) -> float:
    """Largest ladder radius r <= 1 with max over P_r(X) of r^2 |u_t| + r |grad u| at most 1."""
    g = field.grid
    field.require(X.t, X.t, "regularity point")
    if ladder is None:
        ladder = default_scale_ladder(g.spacing)
    ladder = sorted((float(r) for r in ladder if r <= 1.0), reverse=True)
    x = X.x
    per = bool(field[0].periodic)
    grads = {}
    speeds = {}

    def node_values(j):
        if j not in grads:
            grads[j] = np.sqrt(field[j].energy_density)
            speeds[j] = np.linalg.norm(field.time_derivative(j), axis=-1)
        return grads[j], speeds[j]

    coords = g.coords()
    d = coords - x
    if per:
        L = g.spacing * np.asarray(g.counts)
        d = d - L * np.round(d / L)
    d2 = np.sum(d * d, axis=-1)
    nearest = np.unravel_index(int(np.argmin(d2)), d2.shape)
    for r in ladder:
        js = np.nonzero(np.abs(field.times - X.t) < r * r)[0].tolist()
        if not js:
            j0, j1, _ = field.bracket(X.t)
            js = sorted({j0, j1})
        mask = d2 < r * r * INSIDE
        mask[nearest] = True
        worst = 0.0
        for j in js:
            gr, sp = node_values(j)
            worst = max(worst, float(np.max(r * r * sp[mask] + r * gr[mask])))
        if worst <= 1.0:
            return r
    return 0.0


# -- detection -------------------------------------------------------------

def _band_integral(field: SpaceTimeField, attr: str, lo: float, hi: float, nodes: int) -> np.ndarray:
    field.require(lo, hi, "detection band")
    ts = band_nodes(field, lo, hi, nodes)
    acc = None
    for i in range(len(ts) - 1):
        dt = ts[i + 1] - ts[i]
        a = field.interpolate(attr, ts[i])
        b = field.interpolate(attr, ts[i + 1])
        term = 0.5 * dt * (a + b)
        acc = term if acc is None else acc + term
    return acc


def backward_density_map(field: SpaceTimeField, t: float, rho: float, time_nodes: int = 5) -> np.ndarray:
    """E_minus(u, (x, t), rho) at every grid node."""
    g = field.grid
    A = _band_integral(field, "energy_density", t - rho * rho, t, time_nodes)
    S = ball_sum(A, rho, g.spacing, g.n, bool(field[0].periodic))
    return S * g.cell_volume * rho ** (-g.n)


def singular_mask(field: SpaceTimeField, t: float, p: DetectionParams) -> np.ndarray:
    g = field.grid
    mask = np.ones(g.counts, dtype=bool)
    for r in p.ladder(g.spacing):
        mask &= backward_density_map(field, t, 2 * r, p.time_nodes) > p.epsilon ** 2
        if not mask.any():
            break
    return mask


def extract_singular_slice(field: SpaceTimeField, t: float, p: Optional[DetectionParams] = None) -> np.ndarray:
    """Grid nodes whose backward density exceeds epsilon^2 on every ladder scale."""
    p = p or DetectionParams()
    mask = singular_mask(field, t, p)
    return field.grid.coords()[mask]


def _defect_ratios(field: SpaceTimeField, t: float, s: float, ks: Sequence[int], time_nodes: int, floor: float):
    g = field.grid
    n = g.n
    A = _band_integral(field, "gram", t - 4 * s * s, t - s * s, time_nodes)
    M = ball_sum(A, s, g.spacing, n, bool(field[0].periodic)) * g.cell_volume * s ** (-n)
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    w = np.linalg.eigvalsh(M)
    tr = np.maximum(np.trace(M, axis1=-2, axis2=-1), floor)
    cums = np.cumsum(np.maximum(w, 0.0), axis=-1)
    return {k: cums[..., k] / tr for k in ks}, np.trace(M, axis1=-2, axis2=-1)


def stratum_masks(field: SpaceTimeField, t: float, ks: Sequence[int], p: Optional[DetectionParams] = None):
    """Flag masks for several k at once.  Ladder radii whose ball holds only the
    centre node carry no directional information and are skipped."""
    p = p or DetectionParams()
    g = field.grid
    n = g.n
    for k in ks:
        if not 0 <= k <= n - 1:
            raise ValueError(f"k must lie in [0, {n - 1}]")
    j0, j1, a = field.bracket(t)
    total = float(np.sum(field.interpolate("energy_density", t))) * g.cell_volume
    floor = 1e-12 * max(total, 1e-300)
    ladder = [s for s in p.ladder(g.spacing) if len(ball_offsets(s, g.spacing, n)) > 1]
    if not ladder:
        raise ValueError("no ladder radius resolves more than one node")
    masks = {k: np.ones(g.counts, dtype=bool) for k in ks}
    for s in ladder:
        ratios, energy = _defect_ratios(field, t, s, ks, p.time_nodes, floor)
        # below the small-energy threshold the map is close to constant,
        # which is symmetric in every direction
        loud = energy > p.epsilon ** 2
        for k in ks:
            masks[k] &= loud & (ratios[k] > p.threshold(k))
    return masks, ladder


def quantitative_stratum(field: SpaceTimeField, t: float, k: int, p: Optional[DetectionParams] = None) -> StratumSample:
    """Nodes that fail to look (k+1)-symmetric on every ladder scale."""
    p = p or DetectionParams()
    masks, ladder = stratum_masks(field, t, [k], p)
    m = masks[k]
    return StratumSample(t=float(t), k=int(k), points=field.grid.coords()[m], mask=m,
                         ladder=[float(s) for s in ladder],
                         meta={"threshold": p.threshold(k), "epsilon": p.epsilon})


# -- Minkowski content -----------------------------------------------------

def _cover_count(pts: np.ndarray, r: float, delta: float, chunk: int = 400_000) -> int:
    """Number of lattice cells (spacing delta) whose centre lies within r of pts."""
    n = pts.shape[1]
    lo = pts.min(axis=0) - r
    hi = pts.max(axis=0) + r
    counts = np.ceil((hi - lo) / delta).astype(int)
    tree = cKDTree(pts)
    total = 0
    # sweep slabs along the first axis to bound memory
    rest = [lo[i] + delta * (np.arange(counts[i]) + 0.5) for i in range(1, n)]
    rest_grid = np.stack(np.meshgrid(*rest, indexing="ij"), axis=-1).reshape(-1, n - 1) if n > 1 else None
    per_slab = 1 if rest_grid is None else rest_grid.shape[0]
    step = max(1, chunk // per_slab)
    x0 = lo[0] + delta * (np.arange(counts[0]) + 0.5)
    for i in range(0, counts[0], step):
        xs = x0[i:i + step]
        if rest_grid is None:
            cells = xs[:, None]
        else:
            cells = np.concatenate([np.repeat(xs, per_slab)[:, None], np.tile(rest_grid, (len(xs), 1))], axis=1)
        dist, _ = tree.query(cells, k=1, distance_upper_bound=r)
        total += int(np.count_nonzero(dist < r))
    return total


def minkowski_content(S, alpha: float, r: float, flavor: str = "spatial", refine: int = 8,
                      time_refine: int = 1) -> ContentReport:
    """(2r)^(alpha - n) Vol(B_r(S)) or (2r)^(alpha - n - 2) Vol(P_r(S)) by cell counting.

    For the parabolic flavor S holds rows (x..., t).
    """
    pts = np.atleast_2d(np.asarray(S, dtype=float))
    if pts.size == 0 or pts.shape[0] == 0:
        raise ValueError("S must be nonempty")
    if not r > 0:
        raise ValueError("r must be positive")
    if refine < 4:
        raise ValueError("refinement factor must be at least 4")
    delta = r / refine
    if flavor == "spatial":
        n = pts.shape[1]
        vol = _cover_count(pts, r, delta) * delta ** n
        val = (2 * r) ** (alpha - n) * vol
    elif flavor == "parabolic":
        n = pts.shape[1] - 1
        x, tt = pts[:, :n], pts[:, n]
        dt = r * r / time_refine
        t_lo = tt.min() - r * r
        nt = int(math.ceil((tt.max() + r * r - t_lo) / dt))
        vol = 0.0
        for j in range(nt):
            tc = t_lo + (j + 0.5) * dt
            sel = np.abs(tt - tc) < r * r
            if np.any(sel):
                vol += _cover_count(x[sel], r, delta) * delta ** n * dt
        val = (2 * r) ** (alpha - (n + 2)) * vol
    else:
        raise ValueError("flavor must be 'spatial' or 'parabolic'")
    return ContentReport(alpha=float(alpha), r=float(r), content=float(val), flavor=flavor,
                         resolution=delta, volume=float(vol))


# -- weak Lorentz norm -----------------------------------------------------

def weak_lorentz_norm(g, p: float, cell_volume: float = 1.0, mask=None, levels: int = 400,
                      min_nodes: int = 1000) -> float:
    """sup over a logarithmic level grid of s * Vol{|g| > s}^(1/p), volumes by node counting.

    Levels whose superlevel set holds fewer than ``min_nodes`` nodes are not
    resolved by the grid and are skipped: node counting over a set only a few
    cells across overstates its volume by tens of percent.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    a = np.abs(np.asarray(g, dtype=float))
    if mask is not None:
        a = a[np.asarray(mask, bool)]
    a = a.ravel()
    if a.size == 0:
        raise ValueError("empty ball")
    pos = a[a > 0]
    if pos.size == 0:
        return 0.0
    srt = np.sort(pos)
    top = srt[-1] * (1 - 1e-12)
    bottom = min(srt[0], top) * 0.5
    s = np.geomspace(bottom, top, int(levels))
    counts = a.size - np.searchsorted(np.sort(a), s, side="right")
    ok = counts >= min_nodes
    if not np.any(ok):
        return 0.0
    vals = s[ok] * (counts[ok] * cell_volume) ** (1.0 / p)
    return float(np.max(vals))
