import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delayhedge.coefficients import AffineMap, ModelSpec, MollifiedCoefficients, coordinate_kernel, make_payoff
from delayhedge.errors import ConfigError, NondegeneracyError
from delayhedge.hilbert_state import HistoryGrid, inner_arrays
from delayhedge.models import black_scholes_model
from delayhedge.section_pde import (
    SectionCoefficients,
    SectionDomain,
    ValueSurface,
    choose_theta,
    section_coefficients,
    section_crosscheck,
    section_drift,
    solve_section,
)
from delayhedge.semigroup_ops import yosida_arrays
from delayhedge.sde_engine import SimConfig


def domain(m=1, nodes=9, times=9, grid_nodes=9):
    return SectionDomain(np.ones((m, grid_nodes)), 0.25, 0.75, (1.0,) * m, 0.3, nodes, times)


def fixed_coefficients(dom, a, beta=0.0):
    nt, nodes = dom.time_nodes, dom.space_nodes ** dom.m
    amat = np.broadcast_to(np.asarray(a, dtype=float), (nt, nodes, dom.m, dom.m)).copy()
    b = np.full((nt, nodes), float(beta))
    return SectionCoefficients(dom, amat, b, np.zeros((nt, nodes)), (0.0, 0.0))


def boundary_from(dom, fn, se=None):
    t = dom.times[:, None]
    pts = dom.points()
    vals = fn(t, pts)
    std = None if se is None else np.full(vals.shape, se)
    return ValueSurface(dom, vals, "exact", std)


def constant_vol_model(level, m=2):
    grid = HistoryGrid(0.25, 9)
    kernels = [coordinate_kernel(grid, m, 0)]
    slopes = np.zeros((1, m, m))
    return ModelSpec(0.02, 1.0, grid, kernels, AffineMap(level * np.eye(m), slopes),
                     make_payoff("basket", grid, m))


def test_domain_validation():
    with pytest.raises(ConfigError):
        SectionDomain(np.ones((1, 9)), 0.5, 0.25, (1.0,), 0.3)
    with pytest.raises(ConfigError):
        SectionDomain(np.ones((1, 9)), 0.25, 0.5, (1.0,), 0.3, space_nodes=2)
    with pytest.raises(ConfigError):
        SectionDomain(np.ones((2, 9)), 0.25, 0.5, (1.0,), 0.3)
    dom = domain(m=2, nodes=5)
    assert dom.points().shape == (25, 2)
    assert dom.interior_mask().sum() == 9


@pytest.mark.parametrize("theta", [0.5, 1.0])
def test_quadratic_heat_fixture_is_exact(theta):
    dom = domain()
    a = 0.09
    exact = lambda t, x: x[:, 0] ** 2 + a * (dom.t_end - t)
    v = solve_section(fixed_coefficients(dom, [[a]]), boundary_from(dom, exact), theta=theta)
    np.testing.assert_allclose(v.values, exact(dom.times[:, None], dom.points()), atol=1e-12)


def test_quadratic_with_cross_terms_in_two_dimensions():
    dom = domain(m=2, nodes=7, times=5)
    a = np.array([[0.04, 0.01], [0.01, 0.09]])
    q = np.array([[1.0, 0.5], [0.5, -0.3]])
    rate = np.trace(a @ q)
    exact = lambda t, x: np.einsum("pi,ij,pj->p", x, q, x)[None, :] + rate * (dom.t_end - t)
    v = solve_section(fixed_coefficients(dom, a), boundary_from(dom, exact))
    np.testing.assert_allclose(v.values, exact(dom.times[:, None], dom.points()), atol=1e-11)


def test_constant_boundary_gives_constant_solution():
    dom = domain()
    v = solve_section(fixed_coefficients(dom, [[0.05]]), boundary_from(dom, lambda t, x: 0 * t + 0 * x[:, 0] + 2.5))
    np.testing.assert_allclose(v.values, 2.5, atol=1e-13)


def test_constant_source_accumulates_linearly():
    dom = domain()
    b = 0.7
    exact = lambda t, x: b * (dom.t_end - t) + 0 * x[:, 0]
    v = solve_section(fixed_coefficients(dom, [[0.05]], beta=b), boundary_from(dom, exact))
    np.testing.assert_allclose(v.values, exact(dom.times[:, None], dom.points()), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.5))
def test_maximum_principle(seed, a):
    dom = domain()
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(dom.time_nodes, dom.space_nodes))
    v = solve_section(fixed_coefficients(dom, [[a]]), ValueSurface(dom, data, "random"), theta=1.0)
    bnd = data[:, ~dom.interior_mask()].ravel().tolist() + data[-1].tolist()
    assert v.values.max() <= max(bnd) + 1e-12
    assert v.values.min() >= min(bnd) - 1e-12


def test_error_bar_of_an_averaging_solve():
    dom = domain()
    # implicit solve with no source is a convex combination of boundary data
    v = solve_section(fixed_coefficients(dom, [[0.05]]), boundary_from(dom, lambda t, x: 0 * t + x[:, 0], se=0.01),
                      theta=1.0)
    np.testing.assert_allclose(v.std_error, 0.01, rtol=1e-9)


def test_incomplete_boundary_rejected():
    dom = domain()
    data = np.full((dom.time_nodes, dom.space_nodes), np.nan)
    data[:, dom.interior_mask()] = 0.0
    with pytest.raises(ConfigError):
        solve_section(fixed_coefficients(dom, [[0.05]]), ValueSurface(dom, data, "x"))


def test_theta_falls_back_on_rough_diffusion():
    dom = domain()
    c = fixed_coefficients(dom, [[0.05]])
    assert choose_theta(c) == 0.5
    c.a[:, ::2] *= 3.0
    assert choose_theta(c) == 1.0


def test_diagonal_volatility_gives_isotropic_diffusion():
    spec = constant_vol_model(0.3)
    dom = SectionDomain(np.ones((2, 9)), 0.25, 0.75, (1.0, 1.0), 0.3, 5, 3)
    mc = MollifiedCoefficients(spec, 2)
    coeffs = section_coefficients(2, dom, spec, mc, SimConfig(dt=1 / 64, paths=20),
                                  gradient_field=lambda t, x0, x1, w0, w1: (np.zeros(len(x0)), np.zeros(len(x0))))
    np.testing.assert_allclose(coeffs.a, np.broadcast_to(0.09 * np.eye(2), coeffs.a.shape), atol=1e-12)
    assert coeffs.ellipticity == pytest.approx((0.09, 0.09))


def test_constant_payoff_has_no_source():
    spec = black_scholes_model()
    spec = ModelSpec(spec.rate, spec.horizon, spec.grid, spec.kernels, spec.outer,
                     make_payoff("constant", spec.grid, 1, 3.0))
    dom = SectionDomain(np.ones((1, 9)), 0.25, 0.75, (1.0,), 0.3, 5, 3)
    coeffs = section_coefficients(2, dom, spec, MollifiedCoefficients(spec, 2), SimConfig(dt=1 / 64, paths=20))
    inner = dom.interior_mask()
    assert np.all(coeffs.beta[:, inner] == 0.0)
    assert np.all(np.isnan(coeffs.beta[:, ~inner]))


def test_frozen_gradient_field_pairs_with_drift():
    spec = black_scholes_model()
    n = 3
    mc = MollifiedCoefficients(spec, n)
    rng = np.random.default_rng(0)
    p0, p1 = rng.normal(size=1), rng.normal(size=(1, spec.grid.nodes))
    field = lambda t, x0, x1, w0, w1: (inner_arrays(w0, w1, p0, p1, spec.grid), np.zeros(len(x0)))
    dom = SectionDomain(np.ones((1, 9)), 0.25, 0.75, (1.0,), 0.3, 5, 3)
    coeffs = section_coefficients(n, dom, spec, mc, SimConfig(dt=1 / 64, paths=20), gradient_field=field)
    x0s, x1s = dom.states()
    inner = dom.interior_mask()
    a0, a1 = yosida_arrays(n, x0s, x1s, spec.grid)
    g0, g1 = mc.drift_arrays(0.0, x0s, x1s)
    expected = inner_arrays(a0 + g0, a1 + g1, p0, p1, spec.grid)
    for j in range(dom.time_nodes):
        np.testing.assert_allclose(coeffs.beta[j, inner], expected[inner], atol=1e-10)
    w0, w1 = section_drift(n, 0.0, x0s, x1s, mc)
    np.testing.assert_allclose(w0, a0 + g0, atol=1e-10)


def test_degenerate_diffusion_is_reported():
    spec = constant_vol_model(0.0, m=1)
    dom = SectionDomain(np.ones((1, 9)), 0.25, 0.75, (1.0,), 0.3, 5, 3)
    with pytest.raises(NondegeneracyError, match="t="):
        section_coefficients(2, dom, spec, MollifiedCoefficients(spec, 2), SimConfig(dt=1 / 64, paths=20),
                             gradient_field=lambda *a: (np.zeros(3), np.zeros(3)))


def test_crosscheck_constant_payoff_is_exact():
    spec = black_scholes_model()
    spec = ModelSpec(spec.rate, spec.horizon, spec.grid, spec.kernels, spec.outer,
                     make_payoff("constant", spec.grid, 1, 2.0))
    dom = SectionDomain(np.ones((1, 9)), 0.25, 0.75, (1.0,), 0.3, 5, 3)
    rep = section_crosscheck(2, dom, spec, MollifiedCoefficients(spec, 2), SimConfig(dt=1 / 64, paths=30))
    assert rep.max_abs == pytest.approx(0.0, abs=1e-12)
    assert rep.all_passed


def test_crosscheck_black_scholes_passes():
    spec = black_scholes_model()
    dom = SectionDomain(np.ones((1, 9)), 0.25, 0.75, (1.0,), 0.3, 9, 9)
    rep = section_crosscheck(4, dom, spec, MollifiedCoefficients(spec, 4), SimConfig(dt=1 / 64, paths=2000, seed=3),
                             beta_cfg=SimConfig(dt=1 / 64, paths=1000, seed=4))
    assert rep.all_passed, (rep.max_abs, rep.tolerance.max())
