import numpy as np
import pytest

from delayhedge.blackscholes import bs_delta, bs_price
from delayhedge.coefficients import MollifiedCoefficients, make_payoff
from delayhedge.errors import ConfigError
from delayhedge.hilbert_state import LiftedState
from delayhedge.models import black_scholes_model, flat_history_state
from delayhedge.sde_engine import SimConfig
from delayhedge.value_function import SmoothedPayoff, delta, gradient_n, value, value_n


def test_black_scholes_price_and_delta(bs_spec):
    x = flat_history_state(1.0, bs_spec.grid)
    cfg = SimConfig(dt=1 / 64, paths=20000, seed=8)
    p = value(0.0, x, bs_spec, cfg)
    d = delta(0.0, x, bs_spec, cfg)
    assert abs(p.mean - bs_price(1.0, 1.0, 0.02, 0.2, 1.0)) < 4 * p.std_error + 2e-3
    assert abs(d.mean - bs_delta(1.0, 1.0, 0.02, 0.2, 1.0)) < 4 * d.std_error + 5e-3


def test_linear_payoff_delta_is_one():
    spec = black_scholes_model(kind="linear")
    x = flat_history_state(1.0, spec.grid)
    d = delta(0.0, x, spec, SimConfig(dt=1 / 64, paths=200))
    # the splitting scheme keeps the discounted present a martingale up to O(dt)
    assert d.mean == pytest.approx(1.0, abs=0.02)


def test_batch_value_equals_single(ma_spec):
    g = ma_spec.grid
    a, b = flat_history_state(0.9, g), flat_history_state(1.1, g)
    cfg = SimConfig(dt=1 / 64, paths=100, seed=2)
    batch = value(0.0, (np.stack([a.present, b.present]), np.stack([a.history, b.history])), ma_spec, cfg)
    assert batch[1].mean == value(0.0, b, ma_spec, cfg).mean
    assert batch[0].mean < batch[1].mean


def test_smoothed_convex_payoff_is_unchanged(ma_spec):
    hn = SmoothedPayoff(ma_spec.payoff, 4)
    u = np.linspace(0.5, 1.5, 41)
    np.testing.assert_allclose(hn.profile(u), np.maximum(u - 1.0, 0.0), atol=1e-12)


def test_smoothed_linear_payoff_is_exact(grid):
    h = make_payoff("linear", grid, 1, 1.0)
    hn = SmoothedPayoff(h, 3)
    u = np.linspace(-1, 2, 7)
    np.testing.assert_allclose(hn.profile(u), u - 1.0, atol=1e-12)
    with pytest.raises(ConfigError):
        SmoothedPayoff(h, 3, cloud=1)


def test_smoothed_payoff_is_lipschitz_like_the_payoff(ma_spec):
    hn = SmoothedPayoff(ma_spec.payoff, 2)
    u = np.linspace(0, 2, 401)
    slopes = np.abs(np.diff(hn.profile(u)) / np.diff(u))
    assert slopes.max() <= 1.0 + 1e-9


def test_gradient_n_matches_difference_of_values(ma_spec):
    n = 4
    mc = MollifiedCoefficients(ma_spec, n)
    x = flat_history_state(1.0, ma_spec.grid)
    e = LiftedState([1.0], np.zeros(ma_spec.grid.nodes), ma_spec.grid)
    cfg = SimConfig(dt=1 / 64, paths=400, seed=6)
    (g, se), = gradient_n(n, 0.0, x, [e], ma_spec, mc, cfg)
    h = 1e-4
    up = value_n(n, 0.0, x + h * e, ma_spec, mc, cfg).mean
    dn = value_n(n, 0.0, x - h * e, ma_spec, mc, cfg).mean
    assert g == pytest.approx((up - dn) / (2 * h), abs=3 * se)


def test_value_n_is_undiscounted_by_default(bs_spec):
    mc = MollifiedCoefficients(bs_spec, 2)
    x = flat_history_state(1.0, bs_spec.grid)
    cfg = SimConfig(dt=1 / 32, paths=50)
    plain = value_n(2, 0.0, x, bs_spec, mc, cfg)
    disc = value_n(2, 0.0, x, bs_spec, mc, cfg, discount=True)
    assert not plain.discounted
    assert disc.mean == pytest.approx(plain.mean * np.exp(-bs_spec.rate))
