"""Good/bad ball covering of a sampled stratum driven by a density oracle.

A density oracle maps (points, radius) to Phi(u, (z, t0), radius) for every
row z of ``points``.  Balls whose sampled stratum points all keep the density
pinched near the ceiling E are good; good balls are refined by nets until the
stop scale, bad balls are pruned away from a best-fit (k-1)-plane.  The main
covering alternates the two tree types until no final balls remain.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import dawsn, exp1

from .errors import OracleError, StructuralError
from .fieldio import write_csv
from .geometry import SpaceTimePoint
from .gmt import AffineSubspace, WeightedPointCloud, moment_spectrum

log = logging.getLogger(__name__)

LABELS = ("stop", "final-good", "final-bad")
INTERIOR = "interior"  # refined good balls and pruned bad balls, kept for lineage
RTOL = 1e-12


@dataclass
class CoveringParams:
    k: int
    R: float
    rho: float = 1 / 20
    gamma: float = 1 / 10
    eta_prime: float = 1 / 20
    eta: Optional[float] = None
    E: Optional[float] = None
    lattice_pitch: float = 0.25  # in units of r, for the ceiling search

    def __post_init__(self):
        if self.eta is None:
            self.eta = self.rho / 200
        self.validate()

    def validate(self):
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if not 0 < self.R < 1:
            raise ValueError("R must lie in (0, 1)")
        if not 0 < self.rho < 0.1:
            raise ValueError("rho must lie in (0, 1/10)")
        for name in ("gamma", "eta_prime", "eta"):
            v = getattr(self, name)
            if not 0 < v < 0.25:
                raise ValueError(f"{name} must lie in (0, 1/4)")
        if self.eta > self.rho / 100 * (1 + RTOL):
            raise ValueError(f"eta = {self.eta:g} must not exceed rho/100 = {self.rho / 100:g}")
        if self.E is not None and not math.isfinite(self.E):
            raise ValueError("E must be finite")

    def guard(self) -> int:
        """Alternation cap: ceil(log_rho R) + 10."""
        return int(math.ceil(math.log(self.R) / math.log(self.rho) - 1e-9)) + 10

    def to_dict(self) -> dict:
        return {"k": self.k, "R": self.R, "rho": self.rho, "gamma": self.gamma,
                "eta_prime": self.eta_prime, "eta": self.eta, "E": self.E,
                "lattice_pitch": self.lattice_pitch}


# -- oracles ---------------------------------------------------------------

class DensityOracle:
    """Base class; subclasses implement ``values(points, s)``."""

    def values(self, points: np.ndarray, s: float) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, points, s: float) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        if pts.shape[0] == 0:
            return np.zeros(0)
        v = np.asarray(self.values(pts, float(s)), float).reshape(-1)
        bad = ~np.isfinite(v) | (v < 0)
        if bad.any():
            i = int(np.argmax(bad))
            raise OracleError(f"oracle returned {v[i]!r} at z={pts[i].tolist()}, radius={s:g}",
                              point=pts[i], radius=s)
        return v


class FunctionOracle(DensityOracle):
    def __init__(self, fn: Callable[[np.ndarray, float], np.ndarray], name: str = "function"):
        self.fn = fn
        self.name = name

    def values(self, points, s):
        return self.fn(points, s)


class ConstantOracle(DensityOracle):
    def __init__(self, value: float):
        self.value = float(value)

    def values(self, points, s):
        return np.full(points.shape[0], self.value)


class LineOracle(DensityOracle):
    """Phi of the energy measure theta * H^1 restricted to a line.

    Phi(z, s) = theta/(8 pi) * (E1(a/4) - E1(a)),  a = dist(z, line)^2 / (4 s^2),
    which equals theta/(8 pi) * ln 4 on the line for every s.
    """

    def __init__(self, base=(0.0, 0.0, 0.0), direction=(1.0, 0.0, 0.0), theta: float = 8 * math.pi):
        d = np.asarray(direction, float)
        self.line = AffineSubspace(np.asarray(base, float), d / np.linalg.norm(d))
        self.theta = float(theta)

    def values(self, points, s):
        a = self.line.distance2(points) / (4 * s * s)
        out = np.full(a.shape, math.log(4.0))
        m = a > 0
        out[m] = exp1(a[m] / 4) - exp1(a[m])
        return self.theta / (8 * math.pi) * out


_GL_X, _GL_W = np.polynomial.legendre.leggauss(48)


class HedgehogOracle(DensityOracle):
    """Phi of x/|x| in R^3 (phi = 1), ln 2 at the center for every s.

    The heat average of 2/|x|^2 at distance m and lag tau is
    2/(sqrt(tau) m) * F(m / (2 sqrt(tau))) with F the Dawson function.
    """

    def __init__(self, center=(0.0, 0.0, 0.0)):
        self.center = np.asarray(center, float)

    def values(self, points, s):
        m = np.linalg.norm(points - self.center, axis=1)
        v = math.log(4.0) * (_GL_X + 1) / 2  # tau = s^2 e^v, v in [0, ln 4]
        tau = s * s * np.exp(v)
        mm = m[:, None]
        z = mm / (2 * np.sqrt(tau))
        with np.errstate(invalid="ignore", divide="ignore"):
            tg = np.where(mm > 0, 2 * np.sqrt(tau) * dawsn(z) / np.where(mm > 0, mm, 1.0), 1.0)
        return 0.5 * (tg @ _GL_W) * math.log(4.0) / 2


class GridOracle(DensityOracle):
    """Phi computed by quadrature on a space-time field (slow; one quadrature per point)."""

    def __init__(self, field, t0: float, cutoff=None, time_nodes: int = 17):
        self.field = field
        self.t0 = float(t0)
        self.cutoff = cutoff
        self.time_nodes = time_nodes

    def values(self, points, s):
        from .densities import phi_density
        return np.array([phi_density(self.field, SpaceTimePoint(z, self.t0), s, self.cutoff, self.time_nodes)
                         for z in points])


# -- nets ------------------------------------------------------------------

def farthest_point_net(points: np.ndarray, sep: float, start=None) -> np.ndarray:
    """Indices of a maximal sep-net, built greedily by farthest-point insertion.

    The first net point is the sample nearest to ``start`` (or the first
    sample); afterwards the sample farthest from the current net is added while
    that distance is at least ``sep``.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    m = pts.shape[0]
    if m == 0:
        return np.zeros(0, dtype=int)
    i0 = 0 if start is None else int(np.argmin(np.sum((pts - np.asarray(start, float)) ** 2, axis=1)))
    net = [i0]
    dist = np.linalg.norm(pts - pts[i0], axis=1)
    while True:
        j = int(np.argmax(dist))
        if dist[j] < sep:
            break
        net.append(j)
        np.minimum(dist, np.linalg.norm(pts - pts[j], axis=1), out=dist)
    return np.asarray(net, dtype=int)


def is_maximal_net(points: np.ndarray, net_idx, sep: float) -> bool:
    """True iff the net is sep-separated and no sample lies at distance >= sep from it."""
    pts = np.atleast_2d(np.asarray(points, float))
    idx = np.asarray(net_idx, dtype=int)
    if pts.shape[0] == 0:
        return idx.size == 0
    if idx.size == 0:
        return False
    net = pts[idx]
    tree = cKDTree(net)
    if idx.size > 1:
        d, _ = tree.query(net, k=2)
        if np.min(d[:, 1]) < sep:
            return False
    d, _ = tree.query(pts)
    return bool(np.all(d < sep))


def _within(points: np.ndarray, centers: np.ndarray, radius: float) -> np.ndarray:
    """Mask of points inside the open union of balls B_radius(centers)."""
    if len(centers) == 0 or points.shape[0] == 0:
        return np.zeros(points.shape[0], dtype=bool)
    d, _ = cKDTree(np.atleast_2d(centers)).query(points)
    return d < radius


def _points_of(S) -> np.ndarray:
    pts = getattr(S, "points", S)
    return np.atleast_2d(np.asarray(pts, float)) if np.size(pts) else np.zeros((0, 1))


# -- classification --------------------------------------------------------

@dataclass
class BallClass:
    good: bool
    plane: Optional[AffineSubspace] = None
    min_value: float = math.inf
    n_points: int = 0
    n_high: int = 0
    plane_fit: float = 0.0  # max distance of high-density points to the plane, over s

    def __bool__(self):
        return self.good


def _plane_for(high: np.ndarray, dense_point: np.ndarray, k: int, n: int) -> Optional[AffineSubspace]:
    if k <= 0:
        return None  # a (-1)-plane: empty set, everything lies off the tube
    if high.shape[0] >= k:
        sp = moment_spectrum(WeightedPointCloud.uniform(high), high.mean(axis=0), math.inf)
        return sp.plane(k - 1)
    return AffineSubspace(dense_point, np.eye(n)[: k - 1])


def classify_ball(oracle: DensityOracle, S, y, s: float, p: CoveringParams, E: float,
                  r: Optional[float] = None) -> BallClass:
    """Good iff Phi(z, gamma rho s) >= E - eta' for every sample z in B_s(y)."""
    if r is not None and not (p.R * r * (1 - RTOL) <= s <= r * (1 + RTOL)):
        raise ValueError(f"ball radius {s:g} outside [R r, r] = [{p.R * r:g}, {r:g}]")
    pts = _points_of(S)
    y = np.asarray(y, float)
    inside = pts[np.sum((pts - y) ** 2, axis=1) < s * s] if pts.shape[0] else pts
    if inside.shape[0] == 0:
        return BallClass(True)
    vals = oracle(inside, p.gamma * p.rho * s)
    vmin = float(np.min(vals))
    if vmin >= E - p.eta_prime:
        return BallClass(True, min_value=vmin, n_points=inside.shape[0])
    hv = oracle(inside, 2 * p.eta * s)
    high = inside[hv >= E - p.eta / 2]
    plane = _plane_for(high, inside[int(np.argmax(hv))], p.k, pts.shape[1])
    fit = 0.0
    if plane is not None and high.shape[0]:
        fit = float(np.max(plane.distance(high))) / s
    return BallClass(False, plane=plane, min_value=vmin, n_points=inside.shape[0],
                     n_high=int(high.shape[0]), plane_fit=fit)


# -- results ---------------------------------------------------------------

@dataclass
class Ball:
    id: int
    center: np.ndarray
    radius: float
    label: str
    tree: int
    parent: int = -1  # id of the ball whose refinement produced this one
    certificate: Optional[float] = None  # sup Phi(z, 2 r_y) over B_2r_y(y), when computed
    in_window: Optional[bool] = None
    plane_fit: Optional[float] = None

    def as_dict(self) -> dict:
        return {"id": self.id, "center": [float(v) for v in self.center], "radius": self.radius,
                "label": self.label, "tree": self.tree, "parent": self.parent,
                "certificate": self.certificate, "in_window": self.in_window,
                "plane_fit": self.plane_fit}


@dataclass
class NetRecord:
    tree: int
    radius: float
    sep: float
    admissible: np.ndarray  # indices into the sample
    net: np.ndarray  # indices into the sample


@dataclass
class CoverResult:
    center: np.ndarray
    r: float
    params: CoveringParams
    E: float
    balls: List[Ball] = field(default_factory=list)
    trees: List[dict] = field(default_factory=list)
    nets: List[NetRecord] = field(default_factory=list)
    alternations: int = 0

    def _add(self, center, radius, label, tree, parent=-1, **kw) -> Ball:
        b = Ball(len(self.balls), np.asarray(center, float), float(radius), label, tree, parent, **kw)
        self.balls.append(b)
        return b

    def by_label(self, label: str) -> List[Ball]:
        return [b for b in self.balls if b.label == label]

    @property
    def stop_balls(self) -> List[Ball]:
        return self.by_label("stop")

    def content(self, k: Optional[int] = None, label: str = "stop") -> float:
        k = self.params.k if k is None else k
        return float(sum(b.radius ** k for b in self.by_label(label)))

    def to_dict(self) -> dict:
        k = self.params.k
        return {
            "center": [float(v) for v in self.center], "r": self.r, "E": self.E,
            "params": self.params.to_dict(), "alternations": self.alternations,
            "balls": [b.as_dict() for b in self.balls], "trees": self.trees,
            "sums": {lab: self.content(k, lab) for lab in LABELS},
            "count": {lab: len(self.by_label(lab)) for lab in LABELS},
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
        return path

    def write_csv(self, path) -> Path:
        n = self.center.size
        head = ["id"] + [f"y{i}" for i in range(n)] + ["radius", "label", "tree", "parent",
                                                       "certificate", "in_window"]
        rows = []
        for b in self.balls:
            rows.append([b.id] + list(b.center) + [b.radius, b.label, b.tree, b.parent,
                                                   "" if b.certificate is None else b.certificate,
                                                   "" if b.in_window is None else str(bool(b.in_window)).lower()])
        return write_csv(path, head, rows)


# -- trees -----------------------------------------------------------------

class _Ctx:
    """Shared state of one covering run."""

    def __init__(self, oracle, S, center, r, p: CoveringParams, E: float, result: CoverResult):
        self.oracle = oracle
        self.pts = _points_of(S)
        self.center = np.asarray(center, float)
        self.r = float(r)
        self.p = p
        self.E = E
        self.res = result
        self.in_root = (np.sum((self.pts - self.center) ** 2, axis=1) < r * r
                        if self.pts.shape[0] else np.zeros(0, dtype=bool))

    def base(self, a, rA) -> np.ndarray:
        if self.pts.shape[0] == 0:
            return self.in_root
        return self.in_root & (np.sum((self.pts - a) ** 2, axis=1) < rA * rA)

    def net(self, mask, sep, radius, tree, start) -> np.ndarray:
        idx = np.nonzero(mask)[0]
        sel = farthest_point_net(self.pts[idx], sep, start=start)
        self.res.nets.append(NetRecord(tree, radius, sep, idx, idx[sel]))
        return idx[sel]

    def stop_scale(self, ri: float) -> bool:
        return ri <= self.p.R * self.r * (1 + RTOL)

    def classify(self, y, s) -> BallClass:
        return classify_ball(self.oracle, self.pts, y, s, self.p, self.E)

    def add_stop(self, y, radius, tree, parent):
        p = self.p
        lo, hi = p.eta * p.R * self.r, p.R * self.r
        inw = lo * (1 - RTOL) <= radius <= hi * (1 + RTOL)
        cert = None
        if not inw:
            cert = self.certificate(y, radius)
        return self.res._add(y, radius, "stop", tree, parent, certificate=cert, in_window=bool(inw))

    def certificate(self, y, ry) -> float:
        """sup of Phi(z, 2 r_y) over the sampled points of B_2r_y(y) and y itself."""
        y = np.asarray(y, float)
        near = self.pts[np.sum((self.pts - y) ** 2, axis=1) < 4 * ry * ry]
        return float(np.max(self.oracle(np.vstack([near, y[None, :]]), 2 * ry)))

    def new_tree(self, kind, a, rA, parent) -> int:
        tid = len(self.res.trees)
        self.res.trees.append({"id": tid, "kind": kind, "root": [float(v) for v in a],
                               "radius": float(rA), "parent_ball": parent})
        return tid


def _parents(points, centers, ids) -> list:
    if len(points) == 0:
        return []
    _, i = cKDTree(np.atleast_2d(centers)).query(points)
    return [ids[j] for j in np.atleast_1d(i)]


def _good_tree(ctx: _Ctx, a, rA: float, parent: int = -1) -> list:
    """Refine a good ball; returns the bad final balls as (ball, plane) pairs."""
    p = ctx.p
    tid = ctx.new_tree("good", a, rA, parent)
    base = ctx.base(a, rA)
    G, g_ids, r_prev = np.atleast_2d(np.asarray(a, float)), [parent], rA
    bad_cover = np.zeros_like(base)
    finals = []
    while len(G):
        ri = p.rho * r_prev
        adm = base & _within(ctx.pts, G, r_prev) & ~bad_cover
        J = ctx.net(adm, 2 * ri / 5, ri, tid, start=a)
        par = _parents(ctx.pts[J], G, g_ids)
        if ctx.stop_scale(ri):
            for j, pa in zip(J, par):
                ctx.add_stop(ctx.pts[j], ri, tid, pa)
            break
        G_next, ids_next = [], []
        for j, pa in zip(J, par):
            c = ctx.classify(ctx.pts[j], ri)
            if c.good:
                b = ctx.res._add(ctx.pts[j], ri, INTERIOR, tid, pa)
                G_next.append(ctx.pts[j])
                ids_next.append(b.id)
            else:
                b = ctx.res._add(ctx.pts[j], ri, "final-bad", tid, pa, plane_fit=c.plane_fit)
                finals.append((b, c.plane))
                bad_cover |= np.sum((ctx.pts - b.center) ** 2, axis=1) < ri * ri
        G = np.array(G_next).reshape(len(G_next), len(a))
        g_ids, r_prev = ids_next, ri
    return finals


def _tube_masks(ctx: _Ctx, bads, r_prev: float):
    """(in-tube, off-tube) masks over the union of B_r_prev(y) for the bad balls."""
    p = ctx.p
    tube = np.zeros(ctx.pts.shape[0], dtype=bool)
    off = np.zeros_like(tube)
    for y, plane in bads:
        ball = np.sum((ctx.pts - y) ** 2, axis=1) < r_prev * r_prev
        if plane is None:
            near = np.zeros_like(ball)
        else:
            near = plane.distance2(ctx.pts) < (2 * p.rho * r_prev) ** 2
        tube |= ball & near
        off |= ball & ~near
    return tube, off


def _bad_tree(ctx: _Ctx, a, rA: float, plane, parent: int = -1) -> list:
    """Prune a bad ball; returns the good final balls."""
    p = ctx.p
    tid = ctx.new_tree("bad", a, rA, parent)
    base = ctx.base(a, rA)
    bads, b_ids, r_prev = [(np.asarray(a, float), plane)], [parent], rA
    finals = []
    while bads:
        ri = p.rho * r_prev
        centers = np.array([y for y, _ in bads])
        if ctx.stop_scale(ri):
            adm = base & _within(ctx.pts, centers, r_prev)
            Sn = ctx.net(adm, 2 * p.eta * r_prev / 5, p.eta * r_prev, tid, start=a)
            for j, pa in zip(Sn, _parents(ctx.pts[Sn], centers, b_ids)):
                ctx.add_stop(ctx.pts[j], p.eta * r_prev, tid, pa)
            break
        tube, off = _tube_masks(ctx, bads, r_prev)
        Sn = ctx.net(base & off, 2 * p.eta * r_prev / 5, p.eta * r_prev, tid, start=a)
        for j, pa in zip(Sn, _parents(ctx.pts[Sn], centers, b_ids)):
            ctx.add_stop(ctx.pts[j], p.eta * r_prev, tid, pa)
        J = ctx.net(base & tube, 2 * ri / 5, ri, tid, start=a)
        nxt, n_ids = [], []
        for j, pa in zip(J, _parents(ctx.pts[J], centers, b_ids)):
            c = ctx.classify(ctx.pts[j], ri)
            if c.good:
                finals.append(ctx.res._add(ctx.pts[j], ri, "final-good", tid, pa))
            else:
                b = ctx.res._add(ctx.pts[j], ri, INTERIOR, tid, pa, plane_fit=c.plane_fit)
                nxt.append((ctx.pts[j], c.plane))
                n_ids.append(b.id)
        bads, b_ids, r_prev = nxt, n_ids, ri
    return finals


def density_ceiling(oracle: DensityOracle, S, center, r: float, pitch: float = 0.25) -> float:
    """max of Phi(z, 2r) over a lattice in B_2r(center) and the samples there."""
    c = np.asarray(center, float)
    n = c.size
    m = int(math.ceil(2 / pitch))
    ax = np.arange(-m, m + 1) * pitch * r
    lat = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1).reshape(-1, n)
    lat = lat[np.sum(lat * lat, axis=1) < 4 * r * r] + c
    pts = _points_of(S)
    if pts.shape[0]:
        lat = np.vstack([lat, pts[np.sum((pts - c) ** 2, axis=1) < 4 * r * r]])
    return float(np.max(oracle(lat, 2 * r)))


def _ctx_for(oracle, S, center, r, p: CoveringParams):
    pts = _points_of(S)
    E = p.E if p.E is not None else density_ceiling(oracle, pts, center, r, p.lattice_pitch)
    res = CoverResult(np.asarray(center, float), float(r), p, E)
    return _Ctx(oracle, pts, center, r, p, E, res)


def build_good_tree(oracle: DensityOracle, S, a, rA: float, p: CoveringParams,
                    center=None, r: Optional[float] = None) -> CoverResult:
    """Good tree rooted at B_rA(a) inside the root ball B_r(center) (default: the tree root)."""
    center = a if center is None else center
    ctx = _ctx_for(oracle, S, center, rA if r is None else r, p)
    _good_tree(ctx, np.asarray(a, float), rA)
    return ctx.res


def build_bad_tree(oracle: DensityOracle, S, a, rA: float, p: CoveringParams,
                   center=None, r: Optional[float] = None, plane=None) -> CoverResult:
    """Bad tree rooted at B_rA(a); the pruning plane is recomputed when not given."""
    center = a if center is None else center
    ctx = _ctx_for(oracle, S, center, rA if r is None else r, p)
    if plane is None:
        c = ctx.classify(a, rA)
        plane = c.plane
    _bad_tree(ctx, np.asarray(a, float), rA, plane)
    return ctx.res


def main_covering(oracle: DensityOracle, S, center, r: float, p: CoveringParams) -> CoverResult:
    """Alternate good and bad trees from the root ball until no final balls remain."""
    ctx = _ctx_for(oracle, S, center, r, p)
    x0 = np.asarray(center, float)
    c = ctx.classify(x0, r)
    root = ctx.res._add(x0, r, INTERIOR, -1)
    F = [(root, c.plane)]
    good = c.good
    guard = p.guard()
    while F:
        if ctx.res.alternations >= guard:
            raise StructuralError(f"main covering did not terminate after {guard} alternations",
                                  detail={"remaining": len(F)})
        nxt = []
        for b, plane in F:
            if good:
                nxt.extend(_good_tree(ctx, b.center, b.radius, b.id))
            else:
                nxt.extend((f, None) for f in _bad_tree(ctx, b.center, b.radius, plane, b.id))
        ctx.res.alternations += 1
        F, good = nxt, not good
    log.info("covering: %d stop balls after %d alternations", len(ctx.res.stop_balls), ctx.res.alternations)
    return ctx.res


@dataclass
class CoverAudit:
    covered: bool
    uncovered: np.ndarray
    content: float
    count_Rk: float
    per_label: dict
    nets_ok: bool
    bad_nets: list
    window_ok: bool
    window_failures: list
    alternations: int
    alternation_bound: int

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["uncovered"] = self.uncovered.tolist()
        return d


def cover_audit(c: CoverResult, S, k: Optional[int] = None) -> CoverAudit:
    """Check covering, net separation/maximality and stop radii; report content sums."""
    k = c.params.k if k is None else k
    pts = _points_of(S)
    stops = c.stop_balls
    if pts.shape[0]:
        in_root = np.sum((pts - c.center) ** 2, axis=1) < c.r * c.r
        cov = np.zeros(pts.shape[0], dtype=bool)
        for b in stops:
            cov |= np.sum((pts - b.center) ** 2, axis=1) < b.radius ** 2
        uncovered = pts[in_root & ~cov]
    else:
        uncovered = np.zeros((0, c.center.size))
    bad_nets = [i for i, rec in enumerate(c.nets)
                if not is_maximal_net(pts[rec.admissible], np.searchsorted(rec.admissible, rec.net), rec.sep)]
    p = c.params
    fails = []
    for b in stops:
        if b.in_window:
            continue
        cert = b.certificate if b.certificate is not None else math.inf
        if not cert <= c.E - p.eta / 3:
            fails.append(b.id)
    per = {lab: {"count": len(c.by_label(lab)), "sum": c.content(k, lab)} for lab in LABELS}
    bound = int(math.ceil(math.log(p.R) / math.log(p.rho) - 1e-9)) + 2
    return CoverAudit(
        covered=uncovered.shape[0] == 0, uncovered=uncovered,
        content=c.content(k), count_Rk=len(stops) * (p.R * c.r) ** k / c.r ** k,
        per_label=per, nets_ok=not bad_nets, bad_nets=bad_nets,
        window_ok=not fails, window_failures=fails,
        alternations=c.alternations, alternation_bound=bound,
    )
