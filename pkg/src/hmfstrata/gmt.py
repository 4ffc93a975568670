"""Weighted point clouds, moment spectra, displacement and Reifenberg-type checks."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .errors import CostGuardError, StructuralError
from .fieldio import read_csv, write_csv

log = logging.getLogger(__name__)

LOG2 = math.log(2.0)


def omega(k: int) -> float:
    """Volume of the unit k-ball."""
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


@dataclass
class WeightedPointCloud:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size != self.points.shape[0]:
            raise ValueError("one weight per point required")
        if np.any(~(w > 0)) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive and finite")
        self.weights = w

    @classmethod
    def uniform(cls, points, mass: float = 1.0):
        pts = np.atleast_2d(np.asarray(points, float))
        return cls(pts, np.full(pts.shape[0], float(mass)))

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def restrict(self, center, radius: float):
        c = np.asarray(center, float)
        d2 = np.sum((self.points - c) ** 2, axis=1)
        m = d2 < radius * radius
        return self.points[m], self.weights[m]

    def mass_in(self, center, radius: float) -> float:
        return float(np.sum(self.restrict(center, radius)[1]))


@dataclass
class AffineSubspace:
    base: np.ndarray
    basis: np.ndarray  # k x n, orthonormal rows

    def __post_init__(self):
        self.base = np.asarray(self.base, float)
        b = np.asarray(self.basis, float).reshape(-1, self.base.size)
        if b.shape[0] and np.max(np.abs(b @ b.T - np.eye(b.shape[0]))) > 1e-12:
            raise ValueError("basis must be orthonormal")
        self.basis = b

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    def distance2(self, pts) -> np.ndarray:
        d = np.atleast_2d(pts) - self.base
        if self.k == 0:
            return np.sum(d * d, axis=1)
        proj = d @ self.basis.T
        return np.maximum(np.sum(d * d, axis=1) - np.sum(proj * proj, axis=1), 0.0)

    def distance(self, pts) -> np.ndarray:
        return np.sqrt(self.distance2(pts))


@dataclass
class MomentSpectrum:
    center: np.ndarray
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns v_1..v_n
    mass: float
    covariance: np.ndarray

    def plane(self, k: int) -> AffineSubspace:
        return AffineSubspace(self.center, self.eigenvectors[:, :k].T)

    def identity_residual(self) -> float:
        """max_i |C v_i - lambda_i v_i| for the normalised second moment C."""
        C, V, lam = self.covariance, self.eigenvectors, self.eigenvalues
        return float(np.max(np.linalg.norm(C @ V - V * lam, axis=0))) if lam.size else 0.0


def center_of_mass(cloud: WeightedPointCloud, center, radius: float) -> np.ndarray:
    pts, w = cloud.restrict(center, radius)
    if w.size == 0:
        raise ValueError("no mass inside the ball")
    return (w @ pts) / np.sum(w)


def _canonical_vectors(vals: np.ndarray, vecs: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Deterministic eigenvectors: tied groups rotated onto coordinate pivots, signs fixed."""
    n = vecs.shape[0]
    out = vecs.copy()
    scale = max(float(np.max(np.abs(vals))), 1e-300) if vals.size else 1.0
    i = 0
    while i < n:
        j = i + 1
        while j < n and abs(vals[j] - vals[i]) <= rtol * scale:
            j += 1
        if j - i > 1:
            B = vecs[:, i:j]
            P = B @ B.T  # projector onto the eigenspace
            chosen = []
            for _ in range(j - i):
                best, best_v = -1.0, None
                for a in range(n):
                    v = P[:, a].copy()
                    for c in chosen:
                        v -= (c @ v) * c
                    nv = np.linalg.norm(v)
                    if nv > 1e-12 and nv > best + 1e-12:
                        best, best_v = nv, v / nv
                chosen.append(best_v)
            out[:, i:j] = np.array(chosen).T
        i = j
    for c in range(n):
        v = out[:, c]
        nz = np.nonzero(np.abs(v) > 1e-12)[0]
        if nz.size and v[nz[0]] < 0:
            out[:, c] = -v
    return out


def moment_spectrum(cloud: WeightedPointCloud, center, radius: float) -> MomentSpectrum:
    pts, w = cloud.restrict(center, radius)
    if w.size == 0:
        raise ValueError("no mass inside the ball")
    mass = float(np.sum(w))
    xcm = (w @ pts) / mass
    y = pts - xcm
    C = (y * w[:, None]).T @ y / mass
    C = 0.5 * (C + C.T)
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(vals)[::-1]
    vals = np.maximum(vals[order], 0.0)
    vecs = _canonical_vectors(vals, vecs[:, order])
    return MomentSpectrum(center=xcm, eigenvalues=vals, eigenvectors=vecs, mass=mass, covariance=C)


def displacement(cloud: WeightedPointCloud, center, radius: float, k: int) -> float:
    """r^(-k-2) mu(B_r) times the sum of the n-k smallest moment eigenvalues (0 on an empty ball)."""
    n = cloud.n
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, {n}]")
    pts, w = cloud.restrict(center, radius)
    if w.size == 0 or k == n:
        return 0.0
    sp = moment_spectrum(cloud, center, radius)
    return float(radius ** (-k - 2) * sp.mass * np.sum(sp.eigenvalues[k:]))


# -- brute-force oracle ----------------------------------------------------

def _sphere_mesh(n: int, m: int) -> np.ndarray:
    """Roughly uniform unit vectors covering directions up to sign."""
    if n == 2:
        th = np.pi * (np.arange(m) + 0.5) / m
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    # Fibonacci points on the upper hemisphere
    i = np.arange(m) + 0.5
    z = 1 - i / m
    phi = np.pi * (1 + 5 ** 0.5) * i
    rr = np.sqrt(1 - z * z)
    return np.stack([rr * np.cos(phi), rr * np.sin(phi), z], axis=1)


def _angles_to_vec(n, a):
    if n == 2:
        return np.array([math.cos(a[0]), math.sin(a[0])])
    st = math.sin(a[0])
    return np.array([st * math.cos(a[1]), st * math.sin(a[1]), math.cos(a[0])])


def _vec_to_angles(n, v):
    if n == 2:
        return [math.atan2(v[1], v[0])]
    return [math.acos(max(-1.0, min(1.0, v[2]))), math.atan2(v[1], v[0])]


def _plane_cost(n, k, y, w, b, v):
    """Weighted squared distance of y to the k-plane through b.

    v is the line direction for k = 1 in R^3 and the unit normal for
    hyperplanes (k = n - 1); unused for k = 0.
    """
    d = y - b
    if k == 0:
        return float(w @ np.sum(d * d, axis=1))
    if k == n - 1:
        return float(w @ (d @ v) ** 2)
    p = d @ v
    return float(w @ (np.sum(d * d, axis=1) - p * p))


def displacement_bruteforce(cloud: WeightedPointCloud, center, radius: float, k: int,
                            directions: int = 400, pitch: float = 0.25, starts: int = 6) -> float:
    """Direct minimisation of r^(-k-2) int dist^2(y, L) dmu over affine k-planes L.

    Coarse search over bases on a lattice in the ball and directions on a
    sphere mesh, then Nelder-Mead refinement from the best candidates.
    """
    n = cloud.n
    if n > 3 or cloud.points.shape[0] > 60:
        raise CostGuardError("brute-force displacement limited to n <= 3 and at most 60 points")
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, {n}]")
    y, w = cloud.restrict(center, radius)
    if w.size == 0 or k == n:
        return 0.0
    c = np.asarray(center, float)
    step = pitch * radius
    m = int(math.floor(radius / step))
    lat = np.array(list(itertools.product(range(-m, m + 1), repeat=n)), float) * step
    bases = c + lat[np.sum(lat * lat, axis=1) < radius * radius]
    dirs = _sphere_mesh(n, directions) if k > 0 else np.zeros((1, n))
    # coarse grid: all base/direction pairs at once
    D = y[None, :, :] - bases[:, None, :]  # nb, m, n
    sq = np.sum(D * D, axis=2)
    if k == 0:
        cost = sq @ w
        cost = cost[:, None]
    else:
        P = D @ dirs.T  # nb, m, nd
        if k == n - 1:
            cost = np.einsum("bmd,m->bd", P * P, w)
        else:
            cost = np.einsum("bm,m->b", sq, w)[:, None] - np.einsum("bmd,m->bd", P * P, w)
    flat = np.argsort(cost, axis=None)[: max(1, starts)]

    def objective(params):
        b = params[:n]
        v = _angles_to_vec(n, params[n:]) if k > 0 else None
        return _plane_cost(n, k, y, w, b, v)

    best = float(np.min(cost))
    for idx in flat:
        bi, di = np.unravel_index(idx, cost.shape)
        x0 = list(bases[bi]) + (_vec_to_angles(n, dirs[di]) if k > 0 else [])
        res = minimize(objective, np.array(x0), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-13 * max(best, 1e-300), "maxiter": 20000,
                                "maxfev": 40000})
        best = min(best, float(res.fun))
    return max(best, 0.0) * radius ** (-k - 2)


# -- packings and the Reifenberg-type condition ----------------------------

@dataclass
class PackingMeasure:
    centers: np.ndarray
    radii: np.ndarray
    k: int
    doubled: bool = True

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, float))
        self.radii = np.asarray(self.radii, float).ravel()
        if self.radii.size != self.centers.shape[0]:
            raise ValueError("one radius per center required")
        if np.any(~(self.radii > 0)):
            raise ValueError("radii must be positive")

    @property
    def weights(self) -> np.ndarray:
        return omega(self.k) * self.radii ** self.k

    def cloud(self) -> WeightedPointCloud:
        return WeightedPointCloud(self.centers, self.weights)

    def check_disjoint(self):
        """Raise StructuralError naming the first pair of overlapping (doubled) balls."""
        fac = 2.0 if self.doubled else 1.0
        if len(self.radii) < 2:
            return
        tree = cKDTree(self.centers)
        reach = 2 * fac * float(np.max(self.radii))
        for i, j in sorted(tree.query_pairs(reach)):
            dist = float(np.linalg.norm(self.centers[i] - self.centers[j]))
            if dist < fac * (self.radii[i] + self.radii[j]) * (1 - 1e-12):
                raise StructuralError(
                    f"balls {i} and {j} overlap: |y_i - y_j| = {dist:.6g} < {fac * (self.radii[i] + self.radii[j]):.6g}",
                    detail=(i, j))


@dataclass
class ReifenbergReport:
    holds: bool
    delta: float
    packing_ratio: float
    balls: list  # (center, t, sum, sum / t^k)
    failing_scales: list
    max_ratio: float
    mesh: dict = field(default_factory=dict)


def reifenberg_check(P: PackingMeasure, center, radius: float, delta: float, pitch: float = 0.25,
                     abs_tol: float = 1e-12) -> ReifenbergReport:
    """Discrete displacement sums over a mesh of test balls B_t(x) inside B_2r(x0).

    Sums below ``abs_tol * t^k`` are reported as zero (round-off of exactly flat packings).
    """
    P.check_disjoint()
    c = np.asarray(center, float)
    n = P.centers.shape[1]
    k = P.k
    r = float(radius)
    cloud = P.cloud()
    if np.any(np.linalg.norm(P.centers - c, axis=1) >= r):
        log.warning("some atoms lie outside the root ball")
    t_min = 4 * float(np.min(P.radii))
    ts = []
    t = 2 * r
    while t >= t_min * (1 - 1e-12):
        ts.append(t)
        t /= 2
    if len(P.radii) > 1:
        tree = cKDTree(P.centers)
        dd, _ = tree.query(P.centers, k=2)
        min_sep = float(np.min(dd[:, 1]))
    else:
        tree = cKDTree(P.centers)
        min_sep = 0.0
    # displacement table on dyadic scales s_m = 2r 2^-m (m >= -1)
    scales = []
    s = 4 * r
    while s > min_sep and s > 1e-300:
        scales.append(s)
        s /= 2
        if len(scales) > 200:
            break
    table = np.zeros((len(P.radii), len(scales)))
    for mi, s in enumerate(scales):
        for i, y in enumerate(P.centers):
            table[i, mi] = displacement(cloud, y, s, k)
    # cumulative over finer scales: tail[i, m] = sum_{m' >= m} table[i, m']
    tail = np.cumsum(table[:, ::-1], axis=1)[:, ::-1] if scales else np.zeros((len(P.radii), 1))
    step = pitch * r
    m = int(math.floor(2 * r / step))
    lat = np.array(list(itertools.product(range(-m, m + 1), repeat=n)), float) * step + c
    balls = []
    failing = set()
    worst = 0.0
    for j, t in enumerate(ts):
        # t = 2r 2^-j and r_i <= 2t means scales 2t, t, t/2, ...; 2t sits at index j
        mstart = j
        xs = lat[np.linalg.norm(lat - c, axis=1) + t <= 2 * r * (1 + 1e-12)]
        for x in xs:
            idx = tree.query_ball_point(x, t * (1 - 1e-12))
            if not idx:
                continue
            idx = np.asarray(idx)
            val = float(cloud.weights[idx] @ tail[idx, mstart]) if scales and mstart < len(scales) else 0.0
            if val < abs_tol * t ** k:
                val = 0.0
            ratio = val / t ** k
            worst = max(worst, ratio)
            balls.append((x.tolist(), t, val, ratio))
            if val >= delta * t ** k:
                failing.add(t)
    packing_ratio = cloud.mass_in(c, r) / r ** k
    return ReifenbergReport(holds=not failing, delta=float(delta), packing_ratio=float(packing_ratio),
                            balls=balls, failing_scales=sorted(failing), max_ratio=worst,
                            mesh={"pitch": step, "radii": ts, "scales": len(scales)})


def jones_functional(cloud: WeightedPointCloud, x, k: int, scales: Sequence[float]) -> float:
    scales = [float(s) for s in scales]
    if not scales:
        return 0.0
    if cloud.mass_in(x, max(scales)) <= 0:
        raise ValueError("no mass at the largest scale")
    return float(sum(displacement(cloud, x, s, k) for s in scales) * LOG2)


def jones_terms(cloud: WeightedPointCloud, x, k: int, scales: Sequence[float]) -> np.ndarray:
    return np.array([displacement(cloud, x, s, k) * LOG2 for s in scales])


def l2_best_audit(field, cloud: WeightedPointCloud, center, radius: float, t0: float, k: int,
                  cutoff="default", time_nodes: int = 17) -> dict:
    """Compare D^k at (x0, r) with r^-k int (W(u, (y,t0), 2r, r/2) + r) dmu(y)."""
    from .densities import density_gap_W
    from .geometry import SpaceTimePoint

    c = np.asarray(center, float)
    r = float(radius)
    pts, w = cloud.restrict(c, r)
    lhs = displacement(cloud, c, r, k)
    gaps = []
    for y in pts:
        gaps.append(density_gap_W(field, SpaceTimePoint(y, t0), 2 * r, r / 2, cutoff, time_nodes))
    gaps = np.array(gaps)
    rhs = float(r ** (-k) * np.sum(w * (gaps + r))) if w.size else 0.0
    ratio = lhs / rhs if rhs > 0 else 0.0
    return {"radius": r, "k": k, "lhs": lhs, "rhs_raw": rhs, "ratio": ratio,
            "gaps": gaps.tolist(), "atoms": int(w.size)}


# -- CSV ---------------------------------------------------------------------

def write_cloud(path, cloud: WeightedPointCloud):
    header = [f"x{i}" for i in range(cloud.n)] + ["weight"]
    rows = [list(p) + [w] for p, w in zip(cloud.points, cloud.weights)]
    return write_csv(path, header, rows)


def read_cloud(path) -> WeightedPointCloud:
    header, rows = read_csv(path)
    a = np.array(rows, dtype=float).reshape(-1, len(header))
    return WeightedPointCloud(a[:, :-1], a[:, -1])


def write_packing(path, P: PackingMeasure):
    n = P.centers.shape[1]
    header = [f"y{i}" for i in range(n)] + ["r_y"]
    return write_csv(path, header, [list(c) + [r] for c, r in zip(P.centers, P.radii)])
