import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from delayhedge.errors import DomainError, GridMismatchError, NumericalError
from delayhedge.hilbert_state import (
    BNormOperator,
    HistoryGrid,
    LiftedState,
    b_norm,
    b_norm_arrays,
    inner_product,
    norm,
    resolvent_apply,
    resolvent_arrays,
    resolvent_matrix,
)


def resolvent_oracle(mu, x, s_eval):
    """(mu - generator)^{-1} x by adaptive quadrature of the variation-of-constants formula."""
    pts = x.grid.points
    f = lambda r: np.interp(r, pts, x.history[0])
    y0 = x.present[0] / mu
    out = []
    for s in s_eval:
        brk = pts[(pts > s) & (pts < 0)]
        integral = quad(lambda r: math.exp(mu * (s - r)) * f(r), s, 0.0, points=brk if brk.size else None,
                        limit=400, epsabs=1e-13)[0] if s < 0 else 0.0
        out.append(math.exp(mu * s) * y0 + integral)
    return y0, np.array(out)


def test_grid_validation():
    with pytest.raises(DomainError):
        HistoryGrid(-1.0, 10)
    with pytest.raises(DomainError):
        HistoryGrid(1.0, 1)
    g = HistoryGrid(1.0, 11)
    assert g.spacing == pytest.approx(0.1)
    assert g.weights.sum() == pytest.approx(1.0)
    assert g.refine(2).nodes == 21
    assert g.steps_for(0.025) == 4
    with pytest.raises(DomainError):
        g.steps_for(0.03)


def test_state_shape_and_finiteness(grid):
    with pytest.raises(GridMismatchError):
        LiftedState([1.0], np.zeros(5), grid)
    with pytest.raises(NumericalError):
        LiftedState([np.nan], np.zeros(grid.nodes), grid)
    with pytest.raises(GridMismatchError):
        LiftedState.zeros(grid) + LiftedState.zeros(HistoryGrid(1.0, 5))


def test_row_roundtrip(grid, smooth_state):
    back = LiftedState.from_row(smooth_state.to_row(), grid, 1)
    assert back.allclose(smooth_state, atol=0)


def test_norm_matches_trapezoid(grid):
    x = LiftedState.from_function(2.0, lambda s: s, grid)
    expected = math.sqrt(4.0 + np.trapezoid(grid.points ** 2, grid.points))
    assert norm(x) == pytest.approx(expected, rel=1e-12)


def test_resolvent_against_quadrature(grid, smooth_state):
    mu = 1.5
    y = resolvent_apply(mu, smooth_state)
    y0, y1 = resolvent_oracle(mu, smooth_state, grid.points)
    assert y.present[0] == pytest.approx(y0, rel=1e-12)
    np.testing.assert_allclose(y.history[0], y1, atol=1e-9)


def test_resolvent_matrix_matches_arrays(grid, smooth_state):
    mat = resolvent_matrix(2.5, grid)
    stacked = np.concatenate([smooth_state.present, smooth_state.history[0]])
    y0, y1 = resolvent_arrays(2.5, smooth_state.present, smooth_state.history, grid)
    np.testing.assert_allclose(mat @ stacked, np.concatenate([y0, y1[0]]), atol=1e-12)


def test_weak_norm_of_present_unit():
    g = HistoryGrid(12.0, 4801)
    x = LiftedState([1.0], np.zeros(g.nodes), g)
    assert b_norm(x) == pytest.approx(4 * math.sqrt(3) / 9, rel=1e-4)


def test_dual_norm_bounds_pairing(grid):
    k = LiftedState.from_function(0.3, lambda s: np.sin(np.pi * s / 2) ** 2, grid)
    op = BNormOperator(grid)
    dn = op.dual_norm(k)
    assert np.isfinite(dn)
    rng = np.random.default_rng(1)
    for _ in range(20):
        c = rng.normal(size=4)
        x = LiftedState.from_function(c[0], lambda s: c[1] + c[2] * s + c[3] * np.cos(2 * s), grid)
        assert abs(inner_product(x, k)) <= dn * b_norm(x) * 1.02 + 1e-9
    assert op.dual_norm(LiftedState.constant_path(1.0, grid)) == float("inf")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(-3, 3))
def test_weak_norm_is_a_seminorm_dominated_by_norm(coef, scale):
    grid = HistoryGrid(2.0, 41)
    x = LiftedState.from_function(coef[0], lambda s: coef[1] + coef[2] * s + coef[3] * np.sin(s), grid)
    y = LiftedState.from_function(coef[3], lambda s: coef[0] * s ** 2, grid)
    assert b_norm(scale * x) == pytest.approx(abs(scale) * b_norm(x), rel=1e-9, abs=1e-12)
    assert b_norm(x + y) <= b_norm(x) + b_norm(y) + 1e-12
    # the resolvent at 3/2 has operator norm at most 1/(3/2 - 1/2) = 1
    assert b_norm(x) <= norm(x) + 1e-12


def test_batched_weak_norm(grid, smooth_state):
    x0 = np.stack([smooth_state.present, 2 * smooth_state.present])
    x1 = np.stack([smooth_state.history, 2 * smooth_state.history])
    out = b_norm_arrays(x0, x1, grid)
    assert out[1] == pytest.approx(2 * out[0])
    assert out[0] == pytest.approx(b_norm(smooth_state))
