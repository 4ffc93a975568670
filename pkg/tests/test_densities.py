import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from hmfstrata.densities import (CutoffProfile, backward_heat_kernel, critical_c1, density_csv_header,
                                 density_gap_W, density_suite, directional_energy_matrix, dyadic_pairs,
                                 extrapolated_density_suite, kernel_values, least_c1, monotonicity_audit,
                                 symmetry_defect)
from hmfstrata.errors import OutOfDomainError
from hmfstrata.fieldio import read_csv, write_csv
from hmfstrata.flow import make_initial_data
from hmfstrata.geometry import FieldSnapshot, Grid, SpaceTimeField, SpaceTimePoint

from conftest import LN2, constant_field, static_field

ORIGIN = SpaceTimePoint([0.0, 0.0, 0.0], 0.0)


def hedgehog_maker(center=None):
    def make(grid):
        return SpaceTimeField.static(make_initial_data("hedgehog", grid, center=center), -1.0, 1.0)
    return make


# -- kernel ------------------------------------------------------------------

def test_kernel_normalisation_point():
    for n in (1, 2, 3):
        X0 = SpaceTimePoint(np.full(n, 0.3), (4 * math.pi) ** -1 + 2.0)
        X = SpaceTimePoint(np.full(n, 0.3), 2.0)
        assert backward_heat_kernel(X0, X) ** (1 / n) == pytest.approx(1.0, abs=1e-14)


def test_kernel_value_1d():
    v = backward_heat_kernel(SpaceTimePoint([0.0], 1.0), SpaceTimePoint([2.0], 0.0))
    assert v == pytest.approx((4 * math.pi) ** -0.5 * math.exp(-1), rel=1e-14)
    assert v == pytest.approx(0.10378, abs=5e-6)


def test_kernel_domain():
    with pytest.raises(OutOfDomainError):
        backward_heat_kernel(SpaceTimePoint([0.0], 0.0), SpaceTimePoint([0.0], 0.0))


@pytest.mark.parametrize("n,tau", [(1, 0.3), (2, 0.01), (3, 0.04)])
def test_kernel_mass_truncated_box(n, tau):
    # midpoint sum over a box of half width 8 sqrt(tau)
    s = math.sqrt(tau)
    m = 96 if n < 3 else 64
    h = 16 * s / m
    ax = -8 * s + h * (np.arange(m) + 0.5)
    X = np.stack(np.meshgrid(*[ax] * n, indexing="ij"), axis=-1)
    mass = float(np.sum(kernel_values(np.sum(X * X, axis=-1), tau, n))) * h ** n
    assert mass == pytest.approx(1.0, abs=1e-6)


# -- cutoff ------------------------------------------------------------------

def test_cutoff_bounds():
    c = CutoffProfile([0.1, -0.2, 0.0], 1.0)
    g = Grid.cube(3, 81, -2.2, 2.2)
    x = g.coords() + np.array([0.1, -0.2, 0.0])
    v = c.value(x)
    gr = np.linalg.norm(c.grad(x), axis=-1)
    r = np.linalg.norm(x - c.center, axis=-1)
    assert np.all((v >= 0) & (v <= 1))
    assert np.all(v[r <= 1] == 1)
    assert np.all(v[r >= 2] == 0)
    assert np.max(gr) <= 10
    # gradient against central differences
    e = 1e-6
    p = np.array([1.3, 0.4, -0.5])
    fd = [(c.value(p + e * np.eye(3)[i]) - c.value(p - e * np.eye(3)[i])) / (2 * e) for i in range(3)]
    assert np.allclose(fd, c.grad(p), atol=1e-7)


# -- densities ---------------------------------------------------------------

def test_constant_field_densities_zero():
    f = constant_field(n=3, nodes=17, t0=-1.0, t1=1.0)
    rep = density_suite(f, ORIGIN, 0.1, cutoff=None)
    assert rep.E == rep.E_minus == rep.Psi == rep.Phi == 0.0


@pytest.mark.parametrize("rho", [0.05, 0.1, 0.2])
def test_hedgehog_global_densities(rho):
    rep = extrapolated_density_suite(hedgehog_maker(), ORIGIN, rho, nodes=48)
    assert rep.Psi == pytest.approx(0.5, rel=0.02)
    assert rep.Phi == pytest.approx(LN2, rel=0.02)
    assert rep.E_minus == pytest.approx(8 * math.pi, rel=0.02)
    # two-sided E of a static field doubles E_minus
    assert rep.E == pytest.approx(2 * rep.E_minus, rel=1e-12)


def test_coverage_error_names_interval():
    f = static_field("hedgehog", 9, t0=-0.001, t1=0.0)
    with pytest.raises(ValueError, match=r"Phi band .* missing interval \[-0.04, -0.001\]"):
        density_suite(f, ORIGIN, 0.1, cutoff=None, which=("Phi",))


def test_psi_slice_interpolated_metadata():
    f = static_field("hedgehog", 9, t0=-1.0, t1=1.0)
    rep = density_suite(f, ORIGIN, 0.1, cutoff=None)
    assert rep.meta["psi_slice_interpolated"] is True
    assert rep.meta["truncation_radius"] > 0


def test_scaling_invariance():
    c = np.array([0.05, 0.0, 0.0])
    x0 = np.array([0.1, 0.02, 0.0])
    lam = 2.0
    # u(x0 + lam y) is the hedgehog centred at (c - x0)/lam; its densities at (0, 0, rho/lam)
    # equal those of u at (x0, 0, rho).  The rescaled field is sampled on its own grid.
    a = extrapolated_density_suite(hedgehog_maker(c), SpaceTimePoint(x0, 0.0), 0.1, nodes=32, which=("Psi", "Phi"))
    b = extrapolated_density_suite(hedgehog_maker((c - x0) / lam), ORIGIN, 0.1 / lam, nodes=32,
                                   which=("Psi", "Phi"))
    assert b.Psi == pytest.approx(a.Psi, rel=0.01)
    assert b.Phi == pytest.approx(a.Phi, rel=0.01)


def test_gap_W():
    f = static_field("hedgehog", 9, t0=-1.0, t1=1.0)
    assert density_gap_W(f, ORIGIN, 0.1, 0.1) == 0.0
    with pytest.raises(ValueError):
        density_gap_W(f, ORIGIN, 0.1, 0.2)
    # the hedgehog Phi is scale free, so its gap vanishes up to quadrature
    vals = [extrapolated_density_suite(hedgehog_maker(), ORIGIN, r, nodes=48, which=("Phi",)).Phi
            for r in (0.05, 0.1)]
    assert abs(vals[1] - vals[0]) <= 0.01 * LN2


def test_csv_rows_round_trip(tmp_path):
    f = static_field("hedgehog", 9, t0=-1.0, t1=1.0)
    rep = density_suite(f, SpaceTimePoint([0.01, 0.02, 0.03], 0.0), 0.1, cutoff=None)
    p = write_csv(tmp_path / "d.csv", density_csv_header(3), [rep.row()])
    header, rows = read_csv(p)
    assert header == ["x0", "x1", "x2", "t", "rho", "E", "E_minus", "Psi", "Phi"]
    assert [float(v) for v in rows[0]] == rep.row()
    assert rows[0][4] == "0.10000000000000001"


# -- monotonicity ------------------------------------------------------------

def test_least_c1_constant():
    c, e = least_c1([0.1, 0.2, 0.4], [0.0, 0.0, 0.0])
    assert c == 0.0 and np.all(e == 0)


def test_least_c1_grid_and_critical():
    radii, vals = [1.0, 2.0], [1.0, 0.9]
    c, e = least_c1(radii, vals)
    f = lambda C: 0.9 * math.exp(C) - 1.0 + C  # noqa: E731
    assert f(c) >= 0
    grid = np.logspace(-4, 4, 40)
    assert f(grid[np.searchsorted(grid, c) - 1]) < 0
    # 0.9 e^C + C = 1 by bisection
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) < 0 else (lo, mid)
    assert critical_c1(radii, vals) == pytest.approx(lo, abs=1e-12)


def test_least_c1_increasing_values_have_negative_critical():
    assert critical_c1([0.1, 0.2], [1.0, 1.1]) < 0
    assert least_c1([0.1, 0.2], [1.0, 1.1])[0] == 0.0


def test_least_c1_infeasible_reported():
    c, _ = least_c1([0.0, 1e-12], [1.0, 0.0], multiplicative=False)
    assert c is None


def test_dyadic_pairs():
    assert dyadic_pairs([0.1, 0.15, 0.2, 0.3, 0.4]) == [(0, 2), (1, 3), (2, 4)]


def test_monotonicity_constant_field():
    f = constant_field(n=2, nodes=17, t0=-1.0, t1=0.0)
    m = monotonicity_audit(f, SpaceTimePoint([0.0, 0.0], 0.0), [0.05, 0.1, 0.2], cutoff=None)
    assert m.c1_phi == 0.0 and m.c1_psi == 0.0 and not m.psi_flags


def test_monotonicity_hedgehog_c1_zero():
    radii = [0.05, 0.1, 0.2]
    reps = [extrapolated_density_suite(hedgehog_maker(), ORIGIN, r, nodes=48, which=("Psi", "Phi"))
            for r in radii]
    vals = {"Phi": [r.Phi for r in reps], "Psi": [r.Psi for r in reps]}
    m = monotonicity_audit(None, ORIGIN, radii, values=vals, rel_tol=0.01)
    assert m.c1_phi == 0.0
    assert m.phi_feasible


def test_monotonicity_flags_psi_drop():
    vals = {"Phi": [1.0, 1.0, 1.0], "Psi": [1.0, 0.5, 1.0]}
    m = monotonicity_audit(None, ORIGIN, [0.1, 0.2, 0.4], values=vals)
    assert m.psi_flags == [(0.1, 0.2)]


def test_monotonicity_rejects_unsorted():
    with pytest.raises(ValueError):
        monotonicity_audit(None, ORIGIN, [0.2, 0.1], values={"Phi": [0, 0], "Psi": [0, 0]})


# -- directional energy -------------------------------------------------------

def test_directional_matrix_constant():
    f = constant_field(n=3, nodes=9)
    M = directional_energy_matrix(f, [0, 0, 0], 0.0, 0.2)
    assert np.all(M.M == 0)


def test_directional_matrix_x1_invariant():
    g = Grid.cube(3, 17, -0.5, 0.5)
    x = g.coords()
    w = np.stack([np.sin(3 * x[..., 1]), np.cos(3 * x[..., 1]) * np.cos(x[..., 2]),
                  np.cos(3 * x[..., 1]) * np.sin(x[..., 2])], axis=-1)
    f = SpaceTimeField.static(FieldSnapshot(g, 0.0, w), -1.0, 0.0)
    M = directional_energy_matrix(f, [0, 0, 0], 0.0, 0.3).M
    assert np.all(M[0] == 0) and np.all(M[:, 0] == 0)
    assert M[1, 1] > 0


def brute_matrix(field, x0, t0, r):
    # static field: r^-n * band length * sum over open ball nodes of grad_i . grad_j
    s = field[0]
    g = s.grid
    X = g.coords().reshape(-1, g.n)
    G = s.gradient.reshape(-1, g.n, s.d)
    M = np.zeros((g.n, g.n))
    for xi, gi in zip(X, G):
        if np.sum((xi - x0) ** 2) < r * r * (1 - 1e-9):
            M += gi @ gi.T
    return M * g.cell_volume * 3 * r * r * r ** (-g.n)


def test_directional_matrix_line_singular(line32):
    x0 = np.array([0.0, 0.0, 0.0])
    M = directional_energy_matrix(line32, x0, 0.0, 0.25)
    assert np.allclose(M.M, brute_matrix(line32, x0, 0.0, 0.25), rtol=1e-9)
    w = np.sort(np.linalg.eigvalsh(M.M))
    assert abs(w[0]) <= 1e-12 * w[2]
    assert w[1] == pytest.approx(w[2], rel=1e-9)
    assert symmetry_defect(M, 0) <= 1e-12 * np.trace(M.M)


def test_symmetry_defect_diag():
    D = np.diag([0.0, 2.0, 3.0])
    assert [symmetry_defect(D, k) for k in range(3)] == [0.0, 2.0, 5.0]
    assert symmetry_defect(np.zeros((3, 3)), 1) == 0.0
    with pytest.raises(ValueError):
        symmetry_defect(D, 3)


def brute_defect(M, k):
    # inf over (k+1)-planes V of trace(P_V M) in R^3: lines for k = 0, complements of normals for k = 1
    th, ph = np.meshgrid(np.linspace(0, np.pi, 181), np.linspace(0, 2 * np.pi, 361), indexing="ij")
    V = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1).reshape(-1, 3)
    sign = 1.0 if k == 0 else -1.0

    def q(a):
        v = np.array([math.sin(a[0]) * math.cos(a[1]), math.sin(a[0]) * math.sin(a[1]), math.cos(a[0])])
        return sign * v @ M @ v

    vals = sign * np.einsum("pi,ij,pj->p", V, M, V)
    i = int(np.argmin(vals))
    a0 = [math.acos(np.clip(V[i, 2], -1, 1)), math.atan2(V[i, 1], V[i, 0])]
    best = minimize(q, a0, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-14}).fun
    return best if k == 0 else np.trace(M) + best


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_symmetry_defect_matches_subspace_search(seed):
    A = np.random.default_rng(seed).normal(size=(3, 3))
    M = A @ A.T
    for k in (0, 1):
        assert symmetry_defect(M, k) == pytest.approx(brute_defect(M, k), abs=1e-6)
    assert symmetry_defect(M, 2) == pytest.approx(np.trace(M), rel=1e-12)
    vals = [symmetry_defect(M, k) for k in range(3)]
    assert vals == sorted(vals)


def test_directional_matrix_axis_permutation(line32):
    s = line32[0]
    g = s.grid
    perm = (2, 0, 1)
    # both fields use finite-difference gradients
    f1 = SpaceTimeField.static(FieldSnapshot(g, 0.0, s.values), -1.0, 0.0)
    vals = np.transpose(s.values, perm + (3,))
    f2 = SpaceTimeField.static(FieldSnapshot(g, 0.0, vals), -1.0, 0.0)
    x0 = np.array([0.01, -0.02, 0.03])
    M1 = directional_energy_matrix(f1, x0, 0.0, 0.2).M
    # new axis a holds old axis perm[a]
    M2 = directional_energy_matrix(f2, x0[list(perm)], 0.0, 0.2).M
    P = np.eye(3)[list(perm)]
    assert np.allclose(M2, P @ M1 @ P.T, rtol=1e-10, atol=1e-12 * np.trace(M1))
    for k in range(3):
        assert symmetry_defect(M2, k) == pytest.approx(symmetry_defect(M1, k), rel=1e-9)
