import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from delayhedge.coefficients import (
    AffineMap,
    ClippedAffineMap,
    ModelSpec,
    MollifiedCoefficients,
    TanhMap,
    bump,
    coordinate_kernel,
    lipschitz_estimate,
    make_payoff,
    moving_average_kernel,
    quadrature_plan,
    weak_orthonormal_basis,
)
from delayhedge.diagnostics import mollifier_rows, probe_states
from delayhedge.errors import ConfigError
from delayhedge.hilbert_state import HistoryGrid, LiftedState, b_inner, b_norm, inner_product
from delayhedge.models import black_scholes_model


def test_moving_average_kernel_has_unit_mass(grid):
    k = moving_average_kernel(grid, 1, 0.5, present_weight=0.25)
    flat = LiftedState.constant_path(2.0, grid)
    assert inner_product(flat, k) == pytest.approx(2.0, rel=1e-12)
    assert k.history[0, 0] == 0.0
    with pytest.raises(ConfigError):
        moving_average_kernel(grid, 1, 5.0)


def test_weak_basis_is_orthonormal(grid):
    basis = weak_orthonormal_basis(grid, 2, 6)
    gram = np.array([[b_inner(a, b) for b in basis] for a in basis])
    np.testing.assert_allclose(gram, np.eye(6), atol=1e-10)


def test_projection_inverts_embedding(bs_spec):
    mc = MollifiedCoefficients(bs_spec, 4)
    p = np.array([0.3, -1.2, 0.5, 2.0])
    x0, x1 = mc.embed(p)
    np.testing.assert_allclose(mc.project(x0, x1), p, atol=1e-10)
    np.testing.assert_allclose(mc.gram(), np.eye(4), atol=1e-10)


def test_projected_coordinates_agree_between_layouts(ma_spec):
    mc = MollifiedCoefficients(ma_spec, 3)
    x0, x1 = probe_states(ma_spec.grid, 1, 5, seed=2)
    s = np.concatenate([x0[..., None], x1], axis=-1)
    np.testing.assert_allclose(mc.project_stacked(s), mc.project(x0, x1), atol=1e-10)


@pytest.mark.parametrize("dim", [1, 2, 3, 4, 6, 8])
def test_quadrature_is_normalized_and_symmetric(dim):
    plan = quadrature_plan(dim, 0.25)
    assert plan.weights.sum() == pytest.approx(1.0)
    assert np.all(np.linalg.norm(plan.nodes, axis=1) < 0.25)
    np.testing.assert_allclose(plan.weights @ plan.nodes, 0.0, atol=1e-12)


def test_one_dimensional_quadrature_second_moment():
    plan = quadrature_plan(1, 1.0, order=12)
    mass = quad(lambda r: float(bump(r)), -1, 1)[0]
    second = quad(lambda r: r * r * float(bump(r)), -1, 1)[0] / mass
    assert plan.weights @ plan.nodes[:, 0] ** 2 == pytest.approx(second, rel=1e-3)


def test_affine_volatility_is_preserved_on_the_projection(bs_spec):
    mc = MollifiedCoefficients(bs_spec, 3)
    x0, x1 = probe_states(bs_spec.grid, 1, 10, seed=4)
    got = mc.sigma_arrays(0.0, x0, x1)
    projected = mc.embed(mc.project(x0, x1))
    np.testing.assert_allclose(got, bs_spec.sigma_arrays(0.0, *projected), atol=1e-12)


def test_mollified_drift_is_drift_of_projection(ma_spec):
    mc = MollifiedCoefficients(ma_spec, 4)
    x0, x1 = probe_states(ma_spec.grid, 1, 4, seed=1)
    g0, g1 = mc.drift_arrays(0.0, x0, x1)
    p0, p1 = mc.embed(mc.project(x0, x1))
    np.testing.assert_allclose(g0, (ma_spec.rate + 0.5) * p0, atol=1e-12)
    np.testing.assert_allclose(g1, 0.5 * p1, atol=1e-12)


@pytest.mark.parametrize("outer", [
    ClippedAffineMap([[0.0]], [0.5], 0.1, 0.4),
    TanhMap([[0.2]], [0.5], cap=0.1),
    AffineMap([[0.1]], [0.3]),
])
def test_outer_map_jacobian_matches_differences(outer):
    v = np.array([[0.37], [-0.8], [1.3]])
    h = 1e-6
    fd = (outer(0.0, v + h) - outer(0.0, v - h)) / (2 * h)
    np.testing.assert_allclose(outer.jacobian(0.0, v)[..., 0], fd, atol=1e-6)


def test_sigma_directional_matches_differences(ma_spec):
    mc = MollifiedCoefficients(ma_spec, 4)
    x0, x1 = probe_states(ma_spec.grid, 1, 3, seed=5)
    z0, z1 = probe_states(ma_spec.grid, 1, 3, seed=6, level=0.0)
    h = 1e-6
    fd = (mc.sigma_arrays(0, x0 + h * z0, x1 + h * z1) - mc.sigma_arrays(0, x0 - h * z0, x1 - h * z1)) / (2 * h)
    np.testing.assert_allclose(mc.sigma_directional(0, x0, x1, z0, z1), fd, atol=1e-5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2, 4]))
def test_clipped_mollified_sigma_respects_clip(seed, n):
    spec = black_scholes_model()
    spec = ModelSpec(spec.rate, spec.horizon, spec.grid, spec.kernels,
                     ClippedAffineMap([[0.0]], [1.0], 0.1, 0.3), spec.payoff)
    mc = MollifiedCoefficients(spec, n)
    x0, x1 = probe_states(spec.grid, 1, 8, seed=seed, spread=2.0)
    s = mc.sigma_arrays(0.0, x0, x1)
    assert np.all(s >= 0.1 - 1e-12) and np.all(s <= 0.3 + 1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_mollified_volatility_lipschitz_in_weak_norm(seed):
    spec = black_scholes_model()
    rows = mollifier_rows(spec, [2], pairs=20, seed=seed)
    assert rows[0]["lip_sigma"] <= 1.05 * spec.lipschitz_bound


def test_payoffs(grid):
    x = LiftedState.constant_path(1.3, grid)
    assert make_payoff("call", grid, 1, 1.0)(x) == pytest.approx(0.3)
    assert make_payoff("put", grid, 1, 1.0)(x) == 0.0
    assert make_payoff("linear", grid, 1, 1.0)(x) == pytest.approx(0.3)
    assert make_payoff("constant", grid, 1, 2.5)(x) == pytest.approx(2.5)
    assert make_payoff("basket", grid, 2, 1.0)(LiftedState.constant_path([1.0, 2.0], grid)) == pytest.approx(0.5)
    # flat past: the average-strike call is at the money
    assert make_payoff("history_average_strike", grid, 1)(x) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ConfigError):
        make_payoff("digital", grid, 1)


def test_payoff_directional(grid):
    h = make_payoff("call", grid, 1, 1.0)
    x0, x1 = np.array([[1.2], [0.8]]), np.ones((2, 1, grid.nodes))
    d = h.directional(x0, x1, np.ones((2, 1)), np.zeros((2, 1, grid.nodes)))
    np.testing.assert_allclose(d, [1.0, 0.0])


def test_lipschitz_estimate_of_a_linear_map(grid):
    k = moving_average_kernel(grid, 1, 0.5)
    x = [LiftedState.from_function(c, lambda s, c=c: c * np.sin(s), grid) for c in (0.5, 1.0, 2.0)]
    y = [xi * 0.3 for xi in x]
    est = lipschitz_estimate(lambda z: np.array([inner_product(z, k)]), zip(x, y), norm_kind="H")
    assert est <= np.sqrt(inner_product(k, k)) + 1e-12


def test_model_validation(grid):
    k = coordinate_kernel(grid, 1)
    with pytest.raises(ConfigError):
        ModelSpec(0.0, 1.0, grid, [k, k], AffineMap([[0.0]], [0.2]), make_payoff("call", grid, 1))
    with pytest.raises(ConfigError):
        ModelSpec(0.0, -1.0, grid, [k], AffineMap([[0.0]], [0.2]), make_payoff("call", grid, 1))


def test_declared_bounds_for_black_scholes():
    spec = black_scholes_model(vol=0.3)
    e0 = LiftedState([1.0], np.zeros(spec.grid.nodes), spec.grid)
    assert spec.lipschitz_sigma_b > 0
    assert spec.lipschitz_drift_b == pytest.approx(0.5 + spec.rate * 1.5 * b_norm(e0))
