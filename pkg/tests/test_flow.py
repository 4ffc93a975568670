import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmfstrata.densities import CutoffProfile
from hmfstrata.errors import ConfigError, ConstraintError, DegenerateStepError
from hmfstrata.flow import (FlowConfig, flow_step, local_energy_audit, make_initial_data, run_flow,
                            second_fundamental_term)
from hmfstrata.geometry import FieldSnapshot, Grid, SpaceTimeField

from conftest import constant_field, static_field

TWO_PI = 2 * math.pi


def periodic_grid(N, n=2):
    return Grid(np.zeros(n), TWO_PI / N, (N,) * n)


def smooth_periodic(N=32, seed=1, amplitude=0.5):
    return make_initial_data("random-smooth", periodic_grid(N), seed=seed, periodic=True,
                             amplitude=amplitude, modes=2)


# -- second fundamental term -------------------------------------------------

def test_sff_zero_gradient():
    assert np.array_equal(second_fundamental_term([0, 0, 1.0], np.zeros((3, 3))), np.zeros(3))


def test_sff_examples():
    assert np.allclose(second_fundamental_term([1.0, 0, 0], [[0, 1.0, 0]]), [1, 0, 0])
    assert np.allclose(second_fundamental_term([0, 0, 1.0], [[0, 1.0, 0], [1.0, 0, 0]]), [0, 0, 2])


def test_sff_rejects_non_unit():
    with pytest.raises(ConstraintError):
        second_fundamental_term([0, 0, 1.1], [[0, 1.0, 0]])


# -- config guards -----------------------------------------------------------

def test_stability_guard():
    g = Grid.cube(2, 11, 0, 1)
    FlowConfig(dt=g.spacing ** 2 / 8).validate(g)
    with pytest.raises(ConfigError):
        FlowConfig(dt=g.spacing ** 2 / 7.9).validate(g)
    with pytest.raises(ConfigError):
        FlowConfig(scheme="ginzburg-landau", gl_epsilon=0.0, dt=1e-4).validate()
    with pytest.raises(ConfigError):
        FlowConfig(scheme="ginzburg-landau", gl_epsilon=0.01, dt=1e-4).validate()


# -- single steps ------------------------------------------------------------

def test_constant_field_unchanged():
    s = constant_field(n=2, nodes=9)[0]
    w = flow_step(s, FlowConfig(dt=s.grid.spacing ** 2 / 8))
    assert np.array_equal(w.values, s.values)


def test_hedgehog_shell_static():
    # x/|x| solves the flow; one step moves it only by the O(h^2) stencil error
    for N in (9, 17, 33):
        g = Grid.cube(3, N, 0.5, 1.5)
        u = FieldSnapshot(g, 0.0, make_initial_data("hedgehog", g).values)
        dt = g.spacing ** 2 / 120
        w = flow_step(u, FlowConfig(dt=dt))
        assert np.max(np.abs(w.values - u.values)) <= 0.5 * dt * g.spacing ** 2


def test_gl_constant_modulus_two_relaxes():
    eps, dt = 0.5, 0.01
    g = Grid.cube(1, 5, 0, 1)
    u = FieldSnapshot(g, 0.0, np.tile([0.0, 2.0], (5, 1)))
    f = run_flow(u, FlowConfig(scheme="ginzburg-landau", gl_epsilon=eps, dt=dt, end_time=0.5,
                               boundary="periodic"))
    m = np.array([np.linalg.norm(s.values[2]) for s in f])
    assert np.all(np.diff(m) < 0) and np.all(m > 1)
    # ODE m' = (2/eps^2)(1 - m): explicit Euler and the exact solution, first order apart
    euler = 1 + (1 - 2 * dt / eps ** 2) ** np.arange(len(m))
    exact = 1 + np.exp(-2 * f.times / eps ** 2)
    assert np.allclose(m, euler, rtol=1e-12)
    assert np.max(np.abs(m - exact)) < 2 * dt / eps ** 2 * np.max(exact - 1)


def test_degenerate_projection_reports_node():
    # alternating +-e1 on a 1D periodic ring: w = u (1 - 4 dt/h^2) vanishes at dt = h^2/4
    g = Grid(np.zeros(1), 1.0, (4,))
    vals = np.array([[1.0, 0.0], [-1.0, 0.0]] * 2)
    u = FieldSnapshot(g, 0.0, vals, periodic=True)
    with pytest.raises(DegenerateStepError) as exc:
        run_flow(u, FlowConfig(dt=0.25, end_time=0.5, boundary="periodic"))
    assert exc.value.node is not None
    assert "t=0" in str(exc.value)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31), st.permutations([0, 1]), st.lists(st.sampled_from([-1.0, 1.0]), min_size=3, max_size=3))
def test_step_equivariance(seed, perm, signs):
    u = smooth_periodic(16, seed=seed)
    cfg = FlowConfig(dt=u.grid.spacing ** 2 / 8, boundary="periodic")
    base = flow_step(u, cfg).values
    transformed = np.transpose(u.values, tuple(perm) + (2,)) * np.array(signs)
    stepped = flow_step(FieldSnapshot(u.grid, 0.0, transformed, periodic=True), cfg).values
    assert np.max(np.abs(stepped - np.transpose(base, tuple(perm) + (2,)) * np.array(signs))) <= 1e-12


# -- runs --------------------------------------------------------------------

def test_end_time_zero():
    u = smooth_periodic(8)
    f = run_flow(u, FlowConfig(dt=1e-3, end_time=0.0, boundary="periodic"))
    assert len(f) == 1 and np.array_equal(f[0].values, u.values)


def test_projected_unit_constraint_every_step():
    u = smooth_periodic(16, amplitude=0.9)
    f = run_flow(u, FlowConfig(dt=u.grid.spacing ** 2 / 8, end_time=0.3, boundary="periodic"))
    assert np.max(f.monitor["unit_defect"]) <= 1e-12
    assert max(s.unit_defect() for s in f) <= 1e-12


def test_smooth_periodic_gradient_decays():
    u = smooth_periodic(32)
    G = {}
    for fac in (1, 2):
        dt = u.grid.spacing ** 2 / (8 * fac)
        f = run_flow(u, FlowConfig(dt=dt, end_time=1.0, boundary="periodic", record_every=10 ** 6))
        G[fac] = f.monitor["max_grad"]
        tail = G[fac][len(G[fac]) // 10:]
        assert np.all(np.diff(tail) <= 1e-12)
    # refined dt agrees on the end value
    assert G[1][-1] == pytest.approx(G[2][-1], rel=0.02)


def test_first_order_in_time():
    u = smooth_periodic(32)
    ends = {}
    for fac in (1, 2, 4, 8):
        dt = u.grid.spacing ** 2 / (8 * fac)
        ends[fac] = run_flow(u, FlowConfig(dt=dt, end_time=0.2, boundary="periodic",
                                           record_every=10 ** 6))[-1].values
    e = [np.max(np.abs(ends[f] - ends[8])) for f in (1, 2, 4)]
    # against the dt/8 reference, first order predicts ratios (7/8)/(3/8) and (3/8)/(1/8)
    assert e[0] / e[1] == pytest.approx(7 / 3, rel=0.15)
    assert e[1] / e[2] == pytest.approx(3.0, rel=0.15)


def test_gl_small_epsilon_near_sphere():
    u = smooth_periodic(32)
    for eps in (0.2, 0.1, 0.05):
        dt = min(u.grid.spacing ** 2 / 8, eps ** 2 / 4)
        f = run_flow(u, FlowConfig(scheme="ginzburg-landau", gl_epsilon=eps, dt=dt, end_time=0.5,
                                   boundary="periodic", record_every=10 ** 6))
        assert f[-1].unit_defect() < 10 * eps


def test_dirichlet_freezes_boundary():
    g = Grid.cube(2, 17, -1, 1)
    u = make_initial_data("equivariant-disk", g)
    f = run_flow(u, FlowConfig(dt=g.spacing ** 2 / 8, end_time=0.01))
    edge = np.ones(g.counts, bool)
    edge[1:-1, 1:-1] = False
    assert np.max(np.abs(f[-1].values[edge] - u.values[edge])) <= 1e-15


def test_stop_at_unwinding_keeps_peak():
    g = Grid.cube(2, 48, -1, 1)
    u = make_initial_data("equivariant-disk", g)
    f = run_flow(u, FlowConfig(dt=g.spacing ** 2 / 8, end_time=0.5, record_every=50, stop_at_unwinding=True))
    m = f.monitor
    assert "peak_time" in m
    assert f.t_end == pytest.approx(m["peak_time"][0])
    assert np.max(m["max_grad"]) == pytest.approx(m["max_grad"][-1])


# -- initial data ------------------------------------------------------------

def test_initial_point_values():
    from hmfstrata.flow import hedgehog_values, line_singular_values
    u, _ = hedgehog_values(np.array([[1.0, 0, 0]]))
    assert np.allclose(u[0], [1, 0, 0])
    v, _ = line_singular_values(np.array([[5.0, 0, 1.0]]))
    assert np.allclose(v[0], [0, 1])


def test_singular_node_shift_or_error():
    g = Grid.cube(3, 5, -1, 1)  # contains the origin
    s = make_initial_data("hedgehog", g)
    assert np.all(np.linalg.norm(s.grid.coords(), axis=-1) > 0)
    with pytest.raises(ValueError):
        make_initial_data("hedgehog", g, on_singular="error")


def test_random_smooth_deterministic():
    a = smooth_periodic(8, seed=11)
    b = smooth_periodic(8, seed=11)
    c = smooth_periodic(8, seed=12)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


# -- energy audit ------------------------------------------------------------

def test_energy_audit_constant():
    f = constant_field(n=2, nodes=9)
    cut = CutoffProfile([0.0, 0.0], 0.2)
    rep = local_energy_audit(f, [0.0, 0.0], 0.4, cut, -1.0, 0.0)
    assert rep.left == 0 and rep.right == 0 and rep.residual == 0


def test_energy_audit_static_hedgehog_same_time():
    f = static_field("hedgehog", 17)
    cut = CutoffProfile([0.0, 0.0, 0.0], 0.2)
    rep = local_energy_audit(f, [0, 0, 0], 0.4, cut, 0.0, 0.0)
    assert rep.residual == pytest.approx(0.0, abs=1e-12 * rep.right)
    assert rep.residual == rep.right - rep.left


def test_energy_audit_unrecorded_time():
    f = static_field("hedgehog", 9)
    cut = CutoffProfile([0.0, 0.0, 0.0], 0.2)
    with pytest.raises(ValueError, match="nearest recorded times"):
        local_energy_audit(f, [0, 0, 0], 0.4, cut, -0.5, 0.0)
