import math

import numpy as np
import pytest
from scipy.stats import norm

from delayhedge.errors import ConfigError
from delayhedge.hedging import HedgeConfig, hedge_backtest, replication_error_curve
from delayhedge.models import black_scholes_model, flat_history_state


def independent_bs_hedge(rebalances, paths, seed, vol=0.2, rate=0.02, strike=1.0, spot=1.0, horizon=1.0):
    """Exact lognormal market, closed-form deltas, stock plus bank account."""
    rng = np.random.default_rng(seed)
    dt = horizon / rebalances
    s = np.full(paths, spot)

    def price_delta(s, tau):
        d1 = (np.log(s / strike) + (rate + 0.5 * vol ** 2) * tau) / (vol * math.sqrt(tau))
        return s * norm.cdf(d1) - strike * math.exp(-rate * tau) * norm.cdf(d1 - vol * math.sqrt(tau)), norm.cdf(d1)

    value, _ = price_delta(s, horizon)
    for k in range(rebalances):
        _, h = price_delta(s, horizon - k * dt)
        cash = value - h * s
        s = s * np.exp((rate - 0.5 * vol ** 2) * dt + vol * math.sqrt(dt) * rng.standard_normal(paths))
        value = cash * math.exp(rate * dt) + h * s
    err = value - np.maximum(s - strike, 0.0)
    rmse = math.sqrt(np.mean(err ** 2))
    se = np.std(err ** 2, ddof=1) / math.sqrt(paths) / (2 * rmse)
    return rmse, se


def test_config_validation():
    with pytest.raises(ConfigError):
        HedgeConfig(0)
    with pytest.raises(ConfigError):
        HedgeConfig(4, delta_source="oracle")
    with pytest.raises(ConfigError):
        HedgeConfig(4, delta_source="yosida")
    with pytest.raises(ConfigError):
        HedgeConfig(3, market_steps=256)
    assert HedgeConfig(3).steps == 768


def test_linear_payoff_replicates_exactly():
    spec = black_scholes_model(kind="linear")
    res = hedge_backtest(flat_history_state(1.0, spec.grid), spec, HedgeConfig(8, paths=200, delta_source="analytic"))
    assert np.all(np.array(res.trace["h_risky"]) == 1.0)
    assert res.max_abs < 1e-12


def test_zero_volatility_hedge_has_no_error():
    spec = black_scholes_model(vol=0.0)
    res = hedge_backtest(flat_history_state(1.0, spec.grid), spec,
                         HedgeConfig(4, paths=20, delta_source="pathwise", delta_paths=2))
    # deterministic market; the residual is the splitting scheme's O(dt) drift
    assert res.max_abs < 2e-3


def test_self_financing_bookkeeping(ma_spec):
    res = hedge_backtest(flat_history_state(1.0, ma_spec.grid), ma_spec,
                         HedgeConfig(4, paths=30, delta_source="pathwise", delta_paths=50))
    assert res.bookkeeping_residual < 1e-12
    assert not res.flagged.any()


def test_rmse_falls_with_rebalancing():
    spec = black_scholes_model()
    rows = replication_error_curve(flat_history_state(1.0, spec.grid), spec, [4, 16, 64],
                                   HedgeConfig(4, paths=1000, delta_source="analytic"))
    rmse = [r[1] for r in rows]
    assert rmse[0] > rmse[1] > rmse[2]


def test_analytic_hedge_matches_independent_reimplementation():
    spec = black_scholes_model()
    res = hedge_backtest(flat_history_state(1.0, spec.grid), spec,
                         HedgeConfig(16, paths=4000, seed=2, delta_source="analytic"))
    rmse, se = independent_bs_hedge(16, 4000, seed=99)
    assert abs(res.rmse - rmse) <= 3 * math.hypot(res.rmse_se, se)


def test_pathwise_deltas_track_closed_form():
    spec = black_scholes_model()
    x = flat_history_state(1.0, spec.grid)
    mc = hedge_backtest(x, spec, HedgeConfig(4, paths=40, delta_source="pathwise", delta_paths=500))
    ref = hedge_backtest(x, spec, HedgeConfig(4, paths=40, delta_source="analytic"))
    assert abs(mc.rmse - ref.rmse) < 0.2 * ref.rmse
    assert mc.price == pytest.approx(ref.price, abs=0.01)


def test_single_entry_curve():
    spec = black_scholes_model()
    rows = replication_error_curve(flat_history_state(1.0, spec.grid), spec, [8],
                                   HedgeConfig(8, paths=50, delta_source="analytic"))
    assert len(rows) == 1 and rows[0][0] == 8
    with pytest.raises(ConfigError):
        replication_error_curve(flat_history_state(1.0, spec.grid), spec, [], HedgeConfig(8))


def test_analytic_source_rejects_models_with_memory(ma_spec):
    with pytest.raises(ConfigError):
        hedge_backtest(flat_history_state(1.0, ma_spec.grid), ma_spec, HedgeConfig(4, paths=5, delta_source="analytic"))
