"""Closed-form Black-Scholes prices and deltas for models without memory."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

from .coefficients import AffineMap, ModelSpec
from .errors import ConfigError


def _d1(spot, strike, rate, vol, tau):
    return (np.log(spot / strike) + (rate + 0.5 * vol * vol) * tau) / (vol * np.sqrt(tau))


def bs_price(spot, strike, rate, vol, tau, kind: str = "call"):
    spot = np.asarray(spot, dtype=float)
    disc = np.exp(-rate * tau)
    if kind == "linear":
        return spot - strike * disc
    if tau <= 0:
        return np.maximum(spot - strike, 0.0) if kind == "call" else np.maximum(strike - spot, 0.0)
    d1 = _d1(spot, strike, rate, vol, tau)
    d2 = d1 - vol * np.sqrt(tau)
    if kind == "call":
        return spot * norm.cdf(d1) - strike * disc * norm.cdf(d2)
    if kind == "put":
        return strike * disc * norm.cdf(-d2) - spot * norm.cdf(-d1)
    raise ConfigError(f"no closed form for payoff kind {kind!r}")


def bs_delta(spot, strike, rate, vol, tau, kind: str = "call"):
    spot = np.asarray(spot, dtype=float)
    if kind == "linear":
        return np.ones_like(spot)
    if tau <= 0:
        itm = spot > strike if kind == "call" else spot < strike
        return np.where(itm, 1.0 if kind == "call" else -1.0, 0.0)
    d1 = _d1(spot, strike, rate, vol, tau)
    if kind == "call":
        return norm.cdf(d1)
    if kind == "put":
        return norm.cdf(d1) - 1.0
    raise ConfigError(f"no closed form for payoff kind {kind!r}")


def black_scholes_vol(spec: ModelSpec) -> float:
    """Volatility of a model whose diffusion is ``vol * x0``; raises otherwise."""
    out = spec.outer
    ok = (spec.m == 1 and isinstance(out, AffineMap) and out.n_args == 1
          and np.allclose(out.constant, 0.0) and spec.present_only)
    if ok:
        k = spec.kernels[0]
        ok = np.allclose(k.present, 1.0) and not np.any(k.history)
    if not ok:
        raise ConfigError("closed-form deltas need volatility proportional to the present value")
    pay = spec.payoff
    if not (np.allclose(pay.kernel.state.present, 1.0) and not np.any(pay.kernel.state.history)):
        raise ConfigError("closed-form deltas need a payoff on the present value")
    return float(out.slopes[0, 0, 0])
