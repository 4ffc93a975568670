"""Explicit integration of the harmonic map flow into round spheres.

Two schemes are provided: a projected explicit Euler step (Euler step on
the tension field, then nodewise renormalisation) and an unconstrained
Ginzburg-Landau penalty step.  Initial data generators and a discrete audit
of the localized energy inequality live here too.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, ConstraintError, DegenerateStepError, DimensionError, OutOfDomainError
from .geometry import FieldSnapshot, Grid, SpaceTimeField

log = logging.getLogger(__name__)

SCHEMES = ("projected-explicit", "ginzburg-landau")
BOUNDARIES = ("fixed-Dirichlet", "periodic")
DEGENERATE_NORM = 1e-8


@dataclass
class FlowConfig:
    scheme: str = "projected-explicit"
    dt: float = 1e-4
    end_time: float = 0.0
    gl_epsilon: float = 0.1
    boundary: str = "fixed-Dirichlet"
    record_every: int = 1
    stop_at_unwinding: bool = False  # end the run at the gradient peak once it has halved
    unwinding_drop: float = 2.0

    def validate(self, grid: Optional[Grid] = None):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"unknown boundary {self.boundary!r}; choose from {BOUNDARIES}")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.end_time < 0:
            raise ConfigError("end_time must be nonnegative")
        if int(self.record_every) < 1:
            raise ConfigError("record_every must be a positive integer")
        if not self.unwinding_drop > 1:
            raise ConfigError("unwinding_drop must exceed 1")
        if self.scheme == "ginzburg-landau":
            if not self.gl_epsilon > 0:
                raise ConfigError("gl_epsilon must be positive for the Ginzburg-Landau scheme")
            # the penalty term is a linear relaxation with rate 2/eps^2
            if self.dt > 0.5 * self.gl_epsilon ** 2 * (1 + 1e-12):
                raise ConfigError(
                    f"dt={self.dt:g} exceeds the penalty stability limit eps^2/2={0.5 * self.gl_epsilon ** 2:g}")
        if grid is not None:
            limit = grid.spacing ** 2 / (4 * grid.n)
            if self.dt > limit * (1 + 1e-12):
                raise ConfigError(f"dt={self.dt:g} violates the stability guard h^2/(4n)={limit:g}")
        return self

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"


@dataclass
class EnergyAuditReport:
    left: float
    right: float
    residual: float
    cutoff_id: str
    s: float
    t: float
    terms: dict = field(default_factory=dict)
    stationary_residual: Optional[float] = None


# -- nodewise algebra ------------------------------------------------------

def second_fundamental_term(value, gradient) -> np.ndarray:
    """|grad u|^2 u for a unit vector u and gradient rows d_i u."""
    u = np.asarray(value, dtype=float)
    g = np.atleast_2d(np.asarray(gradient, dtype=float))
    if g.shape[-1] != u.shape[-1]:
        raise DimensionError("gradient rows must have the target dimension")
    if abs(np.linalg.norm(u) - 1.0) > 1e-8:
        raise ConstraintError(f"value is not unit length (|u|={np.linalg.norm(u):.12g})")
    return float(np.sum(g * g)) * u


def _stencil(u: np.ndarray, h: float, n: int, periodic: bool):
    """Laplacian and |grad u|^2 with the 2n+1 point stencil.

    For Dirichlet data the arrays cover interior nodes only.
    """
    if periodic:
        lap = np.zeros_like(u)
        g2 = np.zeros(u.shape[:-1])
        for ax in range(n):
            up = np.roll(u, -1, axis=ax)
            dn = np.roll(u, 1, axis=ax)
            lap += up - 2 * u + dn
            g2 += np.sum((up - dn) ** 2, axis=-1)
        return lap / h ** 2, g2 / (4 * h ** 2)
    inner = tuple(slice(1, -1) for _ in range(n))
    c = u[inner]
    lap = np.zeros_like(c)
    g2 = np.zeros(c.shape[:-1])
    for ax in range(n):
        sp = list(inner)
        sm = list(inner)
        sp[ax] = slice(2, None)
        sm[ax] = slice(None, -2)
        up = u[tuple(sp)]
        dn = u[tuple(sm)]
        lap += up - 2 * c + dn
        g2 += np.sum((up - dn) ** 2, axis=-1)
    return lap / h ** 2, g2 / (4 * h ** 2)


def _velocity(u: np.ndarray, h: float, n: int, cfg: FlowConfig):
    """Right-hand side of the scheme; zero on Dirichlet faces.  Returns (v, |grad u|^2)."""
    lap, g2 = _stencil(u, h, n, cfg.periodic)
    if cfg.periodic:
        core = u
    else:
        core = u[tuple(slice(1, -1) for _ in range(n))]
    if cfg.scheme == "projected-explicit":
        rhs = lap + g2[..., None] * core
    else:
        nrm = np.linalg.norm(core, axis=-1, keepdims=True)
        safe = np.where(nrm > 1e-14, nrm, 1.0)
        rhs = lap + (2.0 / cfg.gl_epsilon ** 2) * (1.0 - nrm) * core / safe * (nrm > 1e-14)
    if cfg.periodic:
        return rhs, g2
    v = np.zeros_like(u)
    v[tuple(slice(1, -1) for _ in range(n))] = rhs
    return v, g2


def _advance(u: np.ndarray, h: float, n: int, cfg: FlowConfig, dt: float):
    v, g2 = _velocity(u, h, n, cfg)
    w = u + dt * v
    if cfg.scheme == "projected-explicit":
        nrm = np.linalg.norm(w, axis=-1)
        bad = nrm < DEGENERATE_NORM
        if np.any(bad):
            node = tuple(int(i) for i in np.argwhere(bad)[0])
            raise DegenerateStepError(f"projection degenerate at node {node} (|w|={nrm[node]:.3g})", node=node)
        w = w / nrm[..., None]
    return w, v, g2


def flow_step(f: FieldSnapshot, cfg: FlowConfig) -> FieldSnapshot:
    cfg.validate(f.grid)
    w, _, _ = _advance(f.values, f.grid.spacing, f.grid.n, cfg, cfg.dt)
    return FieldSnapshot(f.grid, f.time + cfg.dt, w, periodic=cfg.periodic, label=f.label)


def tension(f: FieldSnapshot, cfg: FlowConfig) -> np.ndarray:
    """Instantaneous du/dt of the scheme at a snapshot."""
    v, _ = _velocity(f.values, f.grid.spacing, f.grid.n, cfg)
    return v


def run_flow(initial: FieldSnapshot, cfg: FlowConfig) -> SpaceTimeField:
    """Integrate to ``cfg.end_time`` recording every ``record_every`` steps and the final state.

    The monitor holds, per step, the state time, max |du/dt| of the step,
    max |grad u| of the state and, for the projected scheme, the largest
    nodewise ||u| - 1| after the step.  With ``stop_at_unwinding`` the run ends as soon
    as max |grad u| falls below its running peak divided by ``unwinding_drop``
    (a lattice-scale bubble has unwound); snapshots after the peak are dropped
    and the peak state is recorded last.
    """
    cfg.validate(initial.grid)
    g = initial.grid
    h, n = g.spacing, g.n
    u = np.array(initial.values, dtype=float)
    t0 = initial.time
    nsteps = int(math.ceil(cfg.end_time / cfg.dt - 1e-9)) if cfg.end_time > 0 else 0
    every = int(cfg.record_every)

    def snap(values, t, vel):
        return FieldSnapshot(g, t, values, dtdu=vel, periodic=cfg.periodic, label=initial.label)

    v0, _ = _velocity(u, h, n, cfg)
    recorded = [snap(u, t0, v0)]
    mon_t, mon_dtu, mon_grad, mon_unit = [], [], [], []
    projected = cfg.scheme == "projected-explicit"
    peak, peak_u, peak_t, stopped = -1.0, None, t0, False
    for k in range(nsteps):
        t_now = t0 + k * cfg.dt
        dt = cfg.dt if k < nsteps - 1 else (t0 + cfg.end_time) - t_now
        try:
            w, v, g2 = _advance(u, h, n, cfg, dt)
        except DegenerateStepError as exc:
            raise DegenerateStepError(f"{exc} at t={t_now:.6g}", node=exc.node) from exc
        gmax = float(np.sqrt(np.max(g2)))
        mon_t.append(t_now)
        mon_dtu.append(float(np.max(np.abs(w - u))) / dt)
        mon_grad.append(gmax)
        if projected:
            mon_unit.append(float(np.max(np.abs(np.linalg.norm(w, axis=-1) - 1.0))))
        if cfg.stop_at_unwinding:
            if gmax > peak:
                peak, peak_u, peak_t = gmax, u.copy(), t_now
            elif gmax < peak / cfg.unwinding_drop:
                stopped = True
                break
        u = w
        if (k + 1) % every == 0 or k == nsteps - 1:
            vel, _ = _velocity(u, h, n, cfg)
            t_rec = t0 + cfg.end_time if k == nsteps - 1 else t0 + (k + 1) * cfg.dt
            recorded.append(snap(u, t_rec, vel))
    mon = {"time": np.array(mon_t), "max_dtu": np.array(mon_dtu), "max_grad": np.array(mon_grad)}
    if projected:
        mon["unit_defect"] = np.array(mon_unit)
    if stopped:
        recorded = [s for s in recorded if s.time < peak_t - 1e-12 * max(1.0, abs(peak_t))]
        vel, _ = _velocity(peak_u, h, n, cfg)
        recorded.append(snap(peak_u, peak_t, vel))
        keep = mon["time"] <= peak_t
        mon = {key: a[keep] for key, a in mon.items()}
        mon["peak_time"] = np.array([peak_t])
        log.info("flow: gradient peak %.4g at t=%.6g, run stopped after unwinding", peak, peak_t)
    log.info("flow: %d steps, %d snapshots recorded", len(mon["time"]), len(recorded))
    return SpaceTimeField(recorded, monitor=mon)


# -- initial data ----------------------------------------------------------

INITIAL_KINDS = ("hedgehog", "line-singular", "equivariant-disk", "random-smooth")


def _shifted(grid: Grid) -> Grid:
    return Grid(grid.origin + 0.5 * grid.spacing, grid.spacing, grid.counts)


def _radial_unit(y: np.ndarray):
    """y/|y| and its exact gradient (d_i of component a), shape (..., m, m)."""
    r = np.linalg.norm(y, axis=-1)
    u = y / r[..., None]
    m = y.shape[-1]
    grad = (np.eye(m) - u[..., :, None] * u[..., None, :]) / r[..., None, None]
    return u, grad, r


def hedgehog_values(x: np.ndarray, center=None):
    """x/|x| about ``center``; returns (values, exact gradient)."""
    c = np.zeros(x.shape[-1]) if center is None else np.asarray(center, float)
    u, grad, _ = _radial_unit(x - c)
    return u, grad


def line_singular_values(x: np.ndarray, center=None):
    """(x2, x3)/|(x2, x3)| into S^1, singular along the first axis."""
    if x.shape[-1] != 3:
        raise DimensionError("line-singular data needs n = 3")
    c = np.zeros(3) if center is None else np.asarray(center, float)
    y = (x - c)[..., 1:]
    u, g2d, _ = _radial_unit(y)
    grad = np.zeros(x.shape[:-1] + (3, 2))
    grad[..., 1:, :] = g2d
    return u, grad


def _singular_distance(kind, x, center):
    c = np.zeros(x.shape[-1]) if center is None else np.asarray(center, float)
    if kind == "hedgehog":
        return np.linalg.norm(x - c, axis=-1)
    return np.linalg.norm((x - c)[..., 1:], axis=-1)


def make_initial_data(kind: str, grid: Grid, time: float = 0.0, **params) -> FieldSnapshot:
    """Build an initial snapshot.

    hedgehog / line-singular accept ``center``, ``core`` (nodes closer than
    this to the singular set count as singular, default h/4), ``on_singular``
    ("shift" moves the grid by half a cell, "error" raises) and
    ``exact_gradient``.  equivariant-disk accepts ``angle`` (polar angle
    reached at ``radius``).  random-smooth accepts ``seed``, ``d``, ``modes``,
    ``amplitude`` and ``periodic``.
    """
    if kind not in INITIAL_KINDS:
        raise ValueError(f"unknown initial data {kind!r}; choose from {INITIAL_KINDS}")
    if kind in ("hedgehog", "line-singular"):
        center = params.get("center")
        core = float(params.get("core", 0.25 * grid.spacing))
        if not core > 0:
            raise ValueError("core radius must be positive")
        policy = params.get("on_singular", "shift")
        x = grid.coords()
        if np.min(_singular_distance(kind, x, center)) < core:
            if policy != "shift":
                raise OutOfDomainError(f"{kind}: a grid node lies on the singular set")
            grid = _shifted(grid)
            x = grid.coords()
            if np.min(_singular_distance(kind, x, center)) < core:
                raise OutOfDomainError(f"{kind}: singular node persists after shifting the grid")
            log.info("%s: grid shifted by half a cell to avoid the singular set", kind)
        fn = hedgehog_values if kind == "hedgehog" else line_singular_values
        vals, grad = fn(x, center)
        exact = params.get("exact_gradient", True)
        return FieldSnapshot(grid, time, vals, gradient=grad if exact else None, label=kind)
    if kind == "equivariant-disk":
        if grid.n != 2:
            raise DimensionError("equivariant-disk data needs n = 2")
        angle = float(params.get("angle", 1.5 * np.pi))
        radius = float(params.get("radius", 1.0))
        x = grid.coords()
        r = np.linalg.norm(x, axis=-1)
        theta = angle * r / radius
        s = np.sinc(theta / np.pi) * angle / radius  # sin(theta)/r, finite at r = 0
        vals = np.stack([s * x[..., 0], s * x[..., 1], np.cos(theta)], axis=-1)
        return FieldSnapshot(grid, time, vals, label=kind)
    # random-smooth
    seed = int(params.get("seed", 0))
    d = int(params.get("d", 3))
    modes = int(params.get("modes", 3))
    amp = float(params.get("amplitude", 0.6))
    periodic = bool(params.get("periodic", False))
    if not 0 < amp < 1:
        raise ValueError("amplitude must lie in (0, 1) so the field never vanishes")
    rng = np.random.default_rng(seed)
    x = grid.coords()
    L = grid.spacing * np.asarray(grid.counts) if periodic else 2 * grid.extent
    noise = np.zeros(x.shape[:-1] + (d,))
    ks = np.array(np.meshgrid(*[np.arange(-modes, modes + 1)] * grid.n, indexing="ij")).reshape(grid.n, -1).T
    for kv in ks:
        if not kv.any():
            continue
        phase = 2 * np.pi * (x @ (kv / L))
        a = rng.normal(size=d) / (1.0 + kv @ kv)
        b = rng.normal(size=d) / (1.0 + kv @ kv)
        noise += np.cos(phase)[..., None] * a + np.sin(phase)[..., None] * b
    noise *= amp / np.max(np.linalg.norm(noise, axis=-1))
    base = np.zeros(d)
    base[-1] = 1.0
    w = base + noise
    vals = w / np.linalg.norm(w, axis=-1, keepdims=True)
    return FieldSnapshot(grid, time, vals, periodic=periodic, label=kind)


# -- energy audit ----------------------------------------------------------

def _spatial(values: np.ndarray, cell: float) -> float:
    return float(np.sum(values) * cell)


def local_energy_audit(field: SpaceTimeField, center, radius: float, cutoff, s: float, t: float,
                       stationary: bool = True) -> EnergyAuditReport:
    """Both sides of the localized energy inequality on [s, t].

    ``cutoff`` must provide ``value(x)``, ``grad(x)`` and ``id``; it is
    expected to vanish outside B_radius(center).
    """
    if s > t:
        raise ValueError("need s <= t")
    js, jt = field.index_of(s), field.index_of(t)
    if js is None or jt is None:
        bad = s if js is None else t
        near = field.times[np.argsort(np.abs(field.times - bad))[:3]]
        raise ValueError(f"time {bad:g} is not recorded; nearest recorded times {sorted(near.tolist())}")
    g = field.grid
    x = g.coords()
    c = np.asarray(center, float)
    phi = cutoff.value(x)
    dphi = cutoff.grad(x)
    outside = np.linalg.norm(x - c, axis=-1) >= radius
    if np.any(phi[outside] > 1e-12):
        log.warning("cutoff does not vanish outside the audit ball")
    phi2 = phi ** 2
    gphi2 = np.sum(dphi ** 2, axis=-1)
    cell = g.cell_volume
    idx = list(range(js, jt + 1))
    times = field.times[idx]
    kin = np.array([_spatial(np.sum(field.time_derivative(j) ** 2, axis=-1) * phi2, cell) for j in idx])
    flux = np.array([_spatial(field[j].energy_density * gphi2, cell) for j in idx])
    if len(idx) > 1:
        kin_int = float(np.trapezoid(kin, times))
        flux_int = float(np.trapezoid(flux, times))
    else:
        kin_int = flux_int = 0.0
    e_t = _spatial(field[jt].energy_density * phi2, cell)
    e_s = _spatial(field[js].energy_density * phi2, cell)
    left = kin_int + e_t
    right = e_s + 4.0 * flux_int
    stat = None
    if stationary and len(idx) > 1:
        stat = _stationary_residual(field, idx, phi2, 2 * phi[..., None] * dphi, cell)
    return EnergyAuditReport(
        left=left, right=right, residual=right - left, cutoff_id=str(getattr(cutoff, "id", "cutoff")),
        s=float(field.times[js]), t=float(field.times[jt]),
        terms={"kinetic": kin_int, "energy_t": e_t, "energy_s": e_s, "flux": flux_int},
        stationary_residual=stat,
    )


def _stationary_residual(field, idx, phi2, dphi2, cell) -> float:
    """max over coordinate directions e of |int int (|Du|^2 div xi - 2 D xi(Du,Du) + 2 u_t . Du xi)|
    with xi = phi^2 e.  Recorded for information only."""
    n = field.grid.n
    times = field.times[idx]
    worst = 0.0
    for e in range(n):
        vals = []
        for j in idx:
            s = field[j]
            grad = s.gradient
            ut = field.time_derivative(j)
            term = s.energy_density * dphi2[..., e]
            term -= 2 * np.einsum("...i,...ia,...a->...", dphi2, grad, grad[..., e, :])
            term += 2 * np.sum(ut * grad[..., e, :], axis=-1) * phi2
            vals.append(np.sum(term) * cell)
        worst = max(worst, abs(float(np.trapezoid(vals, times))))
    return worst
