"""Heat-kernel weighted densities and directional energy.

Space integrals are node sums times the cell volume; time integrals use the
composite trapezoid rule on the union of recorded snapshot times and a
uniform subdivision of the band, with per-node quantities linearly
interpolated between snapshots.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf

from .errors import OutOfDomainError
from .geometry import Grid, SpaceTimeField, SpaceTimePoint, as_point

log = logging.getLogger(__name__)

TRUNC_LOG = math.log(1e16)  # kernel truncated where G < 1e-16 * max
C1_GRID = np.logspace(-4, 4, 40)
INSIDE = 1.0 - 1e-9  # open balls: |d|^2 < r^2 * INSIDE


def smoothstep5(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


def smoothstep5_deriv(s):
    s = np.clip(s, 0.0, 1.0)
    return 30.0 * s * s * (1.0 - s) ** 2


class CutoffProfile:
    """Radial bump: 1 on B_scale(center), 0 outside B_2scale(center)."""

    inner = 1.0
    outer = 2.0

    def __init__(self, center, scale: float = 1.0):
        if not scale > 0:
            raise ValueError("scale must be positive")
        self.center = as_point(center)
        self.scale = float(scale)

    @property
    def id(self) -> str:
        c = ",".join(f"{v:g}" for v in self.center)
        return f"quintic-bump(center=({c}),scale={self.scale:g})"

    def _s(self, x):
        d = np.asarray(x, float) - self.center
        r = np.linalg.norm(d, axis=-1)
        return d, r, (self.outer - r / self.scale) / (self.outer - self.inner)

    def value(self, x):
        _, _, s = self._s(x)
        return smoothstep5(s)

    def grad(self, x):
        d, r, s = self._s(x)
        dr = -smoothstep5_deriv(s) / (self.scale * (self.outer - self.inner))
        safe = np.where(r > 0, r, 1.0)
        return (dr / safe)[..., None] * d

    def recentered(self, center) -> "CutoffProfile":
        return CutoffProfile(center, self.scale)


@dataclass
class DensityReport:
    center: SpaceTimePoint
    radius: float
    E: float = float("nan")
    E_minus: float = float("nan")
    Psi: float = float("nan")
    Phi: float = float("nan")
    meta: dict = field(default_factory=dict)

    def row(self):
        return list(self.center.x) + [self.center.t, self.radius, self.E, self.E_minus, self.Psi, self.Phi]


@dataclass
class DirectionalEnergyMatrix:
    M: np.ndarray
    center: np.ndarray
    t0: float
    radius: float
    band: tuple

    @property
    def trace(self) -> float:
        return float(np.trace(self.M))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.M + self.M.T))


def backward_heat_kernel(X0: SpaceTimePoint, X: SpaceTimePoint) -> float:
    tau = X0.t - X.t
    if not tau > 0:
        raise OutOfDomainError("backward heat kernel needs t < t0")
    d = X.x - X0.x
    n = X0.n
    return float((4 * math.pi * tau) ** (-n / 2) * math.exp(-(d @ d) / (4 * tau)))


def kernel_values(d2: np.ndarray, tau: float, n: int) -> np.ndarray:
    return (4 * math.pi * tau) ** (-n / 2) * np.exp(-d2 / (4 * tau))


def gaussian_box_mass(lo, hi, x0, tau: float) -> float:
    """Mass of the kernel at time lag tau inside the box [lo, hi]."""
    s = 2.0 * math.sqrt(tau)
    m = 1.0
    for a, b, c in zip(lo, hi, x0):
        m *= 0.5 * (erf((b - c) / s) - erf((a - c) / s))
    return m


# -- quadrature helpers ----------------------------------------------------

def _displacements(grid: Grid, slices, x0, periodic: bool):
    x = grid.sub_coords(slices)
    d = x - x0
    if periodic:
        L = grid.spacing * np.asarray(grid.counts)
        d = d - L * np.round(d / L)
    return d


def _region(grid: Grid, x0, radius: float, periodic: bool):
    if periodic:
        slices = tuple(slice(None) for _ in range(grid.n))
    else:
        slices = grid.box_slices(x0, radius)
    d = _displacements(grid, slices, x0, periodic)
    return slices, d


def band_nodes(field: SpaceTimeField, t_lo: float, t_hi: float, min_nodes: int) -> np.ndarray:
    ts = field.times[(field.times > t_lo) & (field.times < t_hi)]
    extra = np.linspace(t_lo, t_hi, max(int(min_nodes), 2))
    return np.unique(np.concatenate([ts, extra]))


def _trapz(vals, ts) -> float:
    if len(ts) < 2:
        return 0.0
    return float(np.trapezoid(vals, ts))


def _is_periodic(field: SpaceTimeField) -> bool:
    return bool(field[0].periodic)


def _cutoff_weight(cutoff, x0, d):
    if cutoff is None:
        return None
    c = cutoff.recentered(x0) if isinstance(cutoff, CutoffProfile) else cutoff
    return c.value(x0 + d) ** 2


def _resolve_cutoff(cutoff, x0):
    if isinstance(cutoff, str):
        if cutoff == "default":
            return CutoffProfile(x0, 1.0)
        if cutoff == "none":
            return None
        raise ValueError(f"unknown cutoff {cutoff!r}")
    return cutoff


def energy_ball_integral(field: SpaceTimeField, x0, radius: float, t_lo: float, t_hi: float,
                         time_nodes: int = 33) -> float:
    """int_{t_lo}^{t_hi} int_{B_radius(x0)} |grad u|^2."""
    field.require(t_lo, t_hi)
    g = field.grid
    per = _is_periodic(field)
    slices, d = _region(g, x0, radius, per)
    mask = np.sum(d * d, axis=-1) < radius * radius * INSIDE
    ts = band_nodes(field, t_lo, t_hi, time_nodes)
    vals = [float(np.sum(field.interpolate("energy_density", t, slices)[mask])) * g.cell_volume for t in ts]
    return _trapz(vals, ts)


def _kernel_slice(field, x0, t0, tau, weight_fn, slices, d, d2, cell, trunc=True):
    e = field.interpolate("energy_density", t0 - tau, slices)
    G = kernel_values(d2, tau, field.grid.n)
    w = e * G
    if weight_fn is not None:
        w = w * weight_fn
    if trunc:
        keep = d2 <= 4 * tau * TRUNC_LOG
        return float(np.sum(w[keep])) * cell
    return float(np.sum(w)) * cell


def density_suite(field: SpaceTimeField, X0: SpaceTimePoint, rho: float, cutoff="default",
                  time_nodes: int = 33, which: Sequence[str] = ("E", "E_minus", "Psi", "Phi")) -> DensityReport:
    """E, E_minus, Psi and Phi at (X0, rho).

    ``cutoff`` is "default" (unit bump about x0), a CutoffProfile, or None
    for the global variants without cutoff.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    g = field.grid
    n = g.n
    x0, t0 = X0.x, X0.t
    if x0.size != n:
        raise ValueError("center dimension does not match the grid")
    cutoff = _resolve_cutoff(cutoff, x0)
    per = _is_periodic(field)
    rep = DensityReport(center=X0, radius=float(rho))
    meta = {"nodes": list(g.counts), "spacing": g.spacing, "time_nodes": int(time_nodes),
            "cutoff": None if cutoff is None else getattr(cutoff, "id", "custom")}
    r2 = rho * rho
    if "E" in which:
        field.require(t0 - r2, t0 + r2, "E support")
        rep.E = rho ** (-n) * energy_ball_integral(field, x0, rho, t0 - r2, t0 + r2, time_nodes)
    if "E_minus" in which:
        field.require(t0 - r2, t0, "E_minus support")
        rep.E_minus = rho ** (-n) * energy_ball_integral(field, x0, rho, t0 - r2, t0, time_nodes)
    if "Psi" in which or "Phi" in which:
        tau_max = 4 * r2 if "Phi" in which else r2
        trunc = math.sqrt(4 * tau_max * TRUNC_LOG)
        if cutoff is not None and isinstance(cutoff, CutoffProfile):
            trunc = min(trunc, cutoff.outer * cutoff.scale)
        slices, d = _region(g, x0, trunc, per)
        d2 = np.sum(d * d, axis=-1)
        wfn = _cutoff_weight(cutoff, x0, d)
        cell = g.cell_volume
        if not per:
            tail = 1.0 - gaussian_box_mass(g.origin, g.upper, x0, tau_max)
            meta["kernel_tail_mass"] = max(tail, 0.0)
            if tail > 1e-3 and (cutoff is None or not _support_inside(g, x0, cutoff)):
                log.warning("kernel mass outside the grid is %.2e at rho=%g", tail, rho)
        meta["truncation_radius"] = trunc
        if "Psi" in which:
            field.require(t0 - r2, t0 - r2, "Psi slice")
            j = field.index_of(t0 - r2)
            meta["psi_slice_interpolated"] = j is None
            rep.Psi = 0.5 * r2 * _kernel_slice(field, x0, t0, r2, wfn, slices, d, d2, cell)
        if "Phi" in which:
            field.require(t0 - 4 * r2, t0 - r2, "Phi band")
            ts = band_nodes(field, t0 - 4 * r2, t0 - r2, time_nodes)
            vals = [_kernel_slice(field, x0, t0, t0 - t, wfn, slices, d, d2, cell) for t in ts]
            rep.Phi = 0.5 * _trapz(vals, ts)
    rep.meta = meta
    return rep


def _support_inside(g: Grid, x0, cutoff) -> bool:
    R = cutoff.outer * cutoff.scale
    return bool(np.all(x0 - R >= g.origin) and np.all(x0 + R <= g.upper))


def phi_density(field, X0, rho, cutoff="default", time_nodes=33) -> float:
    return density_suite(field, X0, rho, cutoff, time_nodes, which=("Phi",)).Phi


def density_gap_W(field: SpaceTimeField, X0: SpaceTimePoint, R: float, r: float, cutoff="default",
                  time_nodes: int = 33) -> float:
    if not 0 < r <= R:
        raise ValueError("need 0 < r <= R")
    if R == r:
        return 0.0
    return phi_density(field, X0, R, cutoff, time_nodes) - phi_density(field, X0, r, cutoff, time_nodes)


def batch_densities(field: SpaceTimeField, centers: Sequence[SpaceTimePoint], radii: Sequence[float],
                    cutoff="default", time_nodes: int = 33):
    out = []
    for X in centers:
        for rho in radii:
            out.append(density_suite(field, X, rho, cutoff, time_nodes))
    return out


def density_csv_header(n: int):
    return [f"x{i}" for i in range(n)] + ["t", "rho", "E", "E_minus", "Psi", "Phi"]


# -- Richardson-extrapolated evaluation for analytic fields ----------------

def extrapolated_density_suite(make_field: Callable[[Grid], SpaceTimeField], X0: SpaceTimePoint, rho: float,
                               nodes: int = 96, cutoff=None, time_nodes: int = 33,
                               which: Sequence[str] = ("E", "E_minus", "Psi", "Phi"),
                               richardson: bool = True) -> DensityReport:
    """Densities of a field that can be re-sampled on any grid.

    Each density gets a cube adapted to its support, centred so that x0 sits
    in the middle of a cell.  With ``richardson`` the field is also sampled on
    the half-resolution cube with the same alignment and the two node sums
    are combined as 2*I(h) - I(2h), cancelling the first-order error that a
    point singularity at a cell centre produces.
    """
    if nodes % 4:
        raise ValueError("nodes must be a multiple of 4 so both grids keep x0 at a cell centre")
    x0 = X0.x
    r2 = rho * rho
    halfwidth = {"E": 1.05 * rho, "E_minus": 1.05 * rho, "Psi": 6.0 * rho, "Phi": 12.0 * rho}
    rep = DensityReport(center=X0, radius=float(rho))
    meta = {"nodes": nodes, "richardson": bool(richardson), "boxes": {}}
    for name in which:
        hw = halfwidth[name]
        vals = []
        for m in ([nodes, nodes // 2] if richardson else [nodes]):
            grid = Grid.centered(x0, hw, m)
            f = make_field(grid)
            vals.append(getattr(density_suite(f, X0, rho, cutoff, time_nodes, which=(name,)), name))
        v = 2 * vals[0] - vals[1] if richardson else vals[0]
        setattr(rep, name, float(v))
        meta["boxes"][name] = {"half_width": hw, "fine": vals[0], "coarse": vals[-1]}
    rep.meta = meta
    return rep


# -- monotonicity ----------------------------------------------------------

@dataclass
class MonotonicityReport:
    radii: list
    phi: list
    psi: list
    pairs: list
    c1_phi: Optional[float]
    c1_psi: Optional[float]
    critical_phi: float
    phi_feasible: bool
    psi_flags: list
    expressions: dict = field(default_factory=dict)


def _pair_expr(c, r, R, vr, vR, multiplicative):
    if multiplicative:
        return vR * math.exp(c * (R - r)) - vr + c * (R - r)
    return vR - vr + c * (R - r)


def adjacent_pairs(radii) -> list:
    return [(i, i + 1) for i in range(len(radii) - 1)]


def dyadic_pairs(radii, rtol: float = 1e-9) -> list:
    """Index pairs (i, j) with radii[j] = 2 radii[i]."""
    out = []
    for i, r in enumerate(radii):
        for j, R in enumerate(radii):
            if abs(R - 2 * r) <= rtol * R:
                out.append((i, j))
    return out


def least_c1(radii, values, multiplicative: bool = True, rel_tol: float = 0.0, pairs=None):
    """Least C1 on the fitting grid (or 0) making every pair pass.

    Multiplicative form: V(R) exp(C1 (R - r)) - V(r) + C1 (R - r) >= -tol.
    Additive form: V(R) - V(r) + C1 (R - r) >= -tol.
    ``pairs`` are index pairs (r, R) into ``radii``; adjacent radii by default.
    Returns (C1 or None, per-pair expressions at that C1).
    """
    radii = np.asarray(radii, float)
    values = np.asarray(values, float)
    pairs = adjacent_pairs(radii) if pairs is None else pairs
    tol = rel_tol * float(np.max(np.abs(values))) if values.size else 0.0

    def expr(c):
        return np.array([_pair_expr(c, radii[i], radii[j], values[i], values[j], multiplicative)
                         for i, j in pairs])

    for c in np.concatenate([[0.0], C1_GRID]):
        e = expr(c)
        if np.all(e >= -tol):
            return float(c), e
    return None, expr(C1_GRID[-1])


def critical_c1(radii, values, pairs=None) -> float:
    """Smallest real C (possibly negative) with every multiplicative pair expression >= 0.

    Each expression is increasing in C, so this is the largest of the per-pair roots.
    """
    radii = np.asarray(radii, float)
    values = np.asarray(values, float)
    pairs = adjacent_pairs(radii) if pairs is None else pairs
    roots = []
    for i, j in pairs:
        r, R, vr, vR = radii[i], radii[j], values[i], values[j]

        def f(c):
            return _pair_expr(c, r, R, vr, vR, True)

        lo, hi = -1.0, 1.0
        while f(lo) > 0 and lo > -1e12:
            lo *= 2
        while f(hi) < 0 and hi < 1e12:
            hi *= 2
        roots.append(brentq(f, lo, hi, xtol=1e-14, rtol=1e-12))
    return float(max(roots)) if roots else -math.inf


def monotonicity_audit(field: SpaceTimeField, X0: SpaceTimePoint, radii: Sequence[float], cutoff="default",
                       time_nodes: int = 33, rel_tol: float = 0.0, values=None,
                       pairs="adjacent") -> MonotonicityReport:
    """Fit the least C1 for which Phi passes the monotone comparison on pairs of radii.

    ``pairs`` is "adjacent", "dyadic" (every (r, 2r) present in ``radii``) or
    an explicit list of index pairs.  Psi is fitted with the additive form;
    failures there are flagged only.  Precomputed ``values`` (dict with "Phi"
    and "Psi" lists) skip evaluation.
    """
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be increasing")
    if pairs == "adjacent":
        pairs = adjacent_pairs(radii)
    elif pairs == "dyadic":
        pairs = dyadic_pairs(radii)
    if not pairs:
        raise ValueError("no radius pairs to compare")
    if values is None:
        reps = [density_suite(field, X0, r, cutoff, time_nodes, which=("Psi", "Phi")) for r in radii]
        phi = [rp.Phi for rp in reps]
        psi = [rp.Psi for rp in reps]
    else:
        phi, psi = list(values["Phi"]), list(values["Psi"])
    c_phi, e_phi = least_c1(radii, phi, True, rel_tol, pairs)
    c_psi, e_psi = least_c1(radii, psi, False, rel_tol, pairs)
    scale = float(np.max(np.abs(psi))) if len(psi) else 0.0
    flags = [(radii[i], radii[j]) for i, j in pairs if psi[j] - psi[i] < -rel_tol * scale]
    return MonotonicityReport(radii=radii, phi=phi, psi=psi, pairs=[list(p) for p in pairs],
                              c1_phi=c_phi, c1_psi=c_psi, critical_phi=critical_c1(radii, phi, pairs),
                              phi_feasible=c_phi is not None, psi_flags=flags,
                              expressions={"Phi": e_phi.tolist(), "Psi": e_psi.tolist()})


# -- directional energy ----------------------------------------------------

def directional_energy_matrix(field: SpaceTimeField, x0, t0: float, r: float,
                              time_nodes: int = 9) -> DirectionalEnergyMatrix:
    """r^-n int_{t0-4r^2}^{t0-r^2} int_{B_r(x0)} sum_a d_i u^a d_j u^a."""
    g = field.grid
    x0 = as_point(x0, g.n)
    lo, hi = t0 - 4 * r * r, t0 - r * r
    field.require(lo, hi, "directional energy band")
    per = _is_periodic(field)
    slices, d = _region(g, x0, r, per)
    mask = np.sum(d * d, axis=-1) < r * r * INSIDE
    ts = band_nodes(field, lo, hi, time_nodes)
    mats = [np.sum(field.interpolate("gram", t, slices)[mask], axis=0) * g.cell_volume for t in ts]
    M = np.trapezoid(np.array(mats), ts, axis=0) * r ** (-g.n)
    M = 0.5 * (M + M.T)
    return DirectionalEnergyMatrix(M=M, center=x0, t0=float(t0), radius=float(r), band=(lo, hi))


def symmetry_defect(M, k: int) -> float:
    """Sum of the k+1 smallest eigenvalues: the least directional energy over (k+1)-planes."""
    A = M.M if isinstance(M, DirectionalEnergyMatrix) else np.asarray(M, float)
    n = A.shape[0]
    if not 0 <= k <= n - 1:
        raise ValueError(f"k must lie in [0, {n - 1}]")
    w = np.linalg.eigvalsh(0.5 * (A + A.T))
    return float(max(np.sum(w[: k + 1]), 0.0))


# -- ball sums over the whole grid (used by the strata module) -------------

def ball_offsets(radius: float, h: float, n: int) -> np.ndarray:
    m = int(math.floor(radius / h))
    rng = np.arange(-m, m + 1)
    grid = np.stack(np.meshgrid(*[rng] * n, indexing="ij"), axis=-1).reshape(-1, n)
    keep = np.sum((grid * h) ** 2, axis=1) < radius * radius * INSIDE
    return grid[keep]


def ball_sum(arr: np.ndarray, radius: float, h: float, n: int, periodic: bool) -> np.ndarray:
    """For every node, the sum of ``arr`` over nodes in the open ball of ``radius``.

    ``arr`` has shape counts + extra; outside nodes count as zero unless periodic.
    """
    offs = ball_offsets(radius, h, n)
    extra = arr.shape[n:]
    if len(offs) <= 343:
        out = np.zeros_like(arr)
        counts = arr.shape[:n]
        for o in offs:
            if periodic:
                out += np.roll(arr, shift=tuple(-o), axis=tuple(range(n)))
                continue
            src, dst = [], []
            for ax in range(n):
                c = int(o[ax])
                if c >= 0:
                    src.append(slice(c, counts[ax]))
                    dst.append(slice(0, counts[ax] - c))
                else:
                    src.append(slice(0, counts[ax] + c))
                    dst.append(slice(-c, counts[ax]))
            out[tuple(dst)] += arr[tuple(src)]
        return out
    m = int(np.max(np.abs(offs)))
    K = np.zeros((2 * m + 1,) * n)
    K[tuple((offs + m).T)] = 1.0
    flat = arr.reshape(arr.shape[:n] + (-1,))
    res = np.empty_like(flat)
    if periodic:
        shape = arr.shape[:n]
        Kp = np.zeros(shape)
        Kp[tuple((offs % np.asarray(shape)).T)] = 1.0
        # correlation with a symmetric stencil equals convolution
        FK = np.fft.rfftn(Kp)
        for c in range(flat.shape[-1]):
            res[..., c] = np.fft.irfftn(np.fft.rfftn(flat[..., c]) * FK, s=shape)
    else:
        from scipy.signal import fftconvolve
        for c in range(flat.shape[-1]):
            res[..., c] = fftconvolve(flat[..., c], K, mode="same")
    return res.reshape(arr.shape) if extra else res[..., 0]
