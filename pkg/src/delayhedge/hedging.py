"""Discrete delta hedging of path-dependent claims on simulated markets.

The hedger holds ``h_R`` units of the risky asset (the present value ``x0``)
and ``h_P`` units of the bond ``P_s = exp(r s)``.  At each rebalance date
``h_R`` is set to the estimated derivative of the price along the present
coordinate and the bond position absorbs the rest, so the portfolio is
self-financing between dates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .blackscholes import black_scholes_vol, bs_delta, bs_price
from .coefficients import MollifiedCoefficients, ModelSpec
from .errors import ConfigError
from .hilbert_state import LiftedState
from .rng import derive_seed
from .sde_engine import SimConfig, simulate_mild
from .value_function import delta as mc_delta
from .value_function import gradient_n, value, value_n

DELTA_SOURCES = ("pathwise", "yosida", "analytic")


@dataclass(frozen=True)
class HedgeConfig:
    rebalances: int
    paths: int = 1000
    seed: int = 0
    delta_source: str = "pathwise"
    delta_paths: int = 2000
    n: int | None = None
    market_steps: int | None = None
    max_dim: int = 4
    threads: int = 1

    def __post_init__(self):
        if self.rebalances < 1:
            raise ConfigError("rebalance count must be >= 1")
        if self.paths < 1:
            raise ConfigError("path count must be >= 1")
        if self.delta_source not in DELTA_SOURCES:
            raise ConfigError(f"delta_source must be one of {DELTA_SOURCES}")
        if self.delta_source == "yosida" and (self.n is None or self.n < 1):
            raise ConfigError("the yosida delta source needs an index n >= 1")
        if self.delta_source != "analytic" and self.delta_paths < 2:
            raise ConfigError("delta_paths must be >= 2")
        if self.market_steps is not None and self.market_steps % self.rebalances:
            raise ConfigError("market_steps must be a multiple of the rebalance count")

    @property
    def steps(self) -> int:
        if self.market_steps is not None:
            return self.market_steps
        return math.lcm(self.rebalances, 256)


@dataclass
class HedgeResult:
    errors: np.ndarray            # terminal V_T - payoff, NaN on flagged paths
    flagged: np.ndarray           # paths excluded after a failed delta estimate
    rebalances: int
    price: float
    trace: dict = field(default_factory=dict)
    bookkeeping_residual: float = 0.0

    @property
    def valid(self) -> np.ndarray:
        return self.errors[~self.flagged]

    @property
    def mean(self) -> float:
        return float(np.mean(self.valid))

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean(self.valid ** 2)))

    @property
    def rmse_se(self) -> float:
        """Delta-method standard error of the RMSE."""
        e2 = self.valid ** 2
        if e2.size < 2 or self.rmse == 0:
            return 0.0
        return float(np.std(e2, ddof=1) / math.sqrt(e2.size) / (2 * self.rmse))

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.valid)))

    def summary(self) -> dict:
        return {"rebalances": self.rebalances, "paths": int(self.errors.size),
                "flagged": int(self.flagged.sum()), "mean": self.mean, "rmse": self.rmse,
                "rmse_se": self.rmse_se, "max_abs": self.max_abs, "price": self.price}


def _units(spec: ModelSpec):
    m, N = spec.m, spec.grid.nodes
    return [(np.eye(m)[j], np.zeros((m, N))) for j in range(m)]


class _DeltaSource:
    """Price at the start and present-coordinate deltas at each date."""

    def __init__(self, spec: ModelSpec, cfg: HedgeConfig, dt: float):
        self.spec, self.cfg, self.dt = spec, cfg, dt
        if cfg.delta_source == "analytic":
            self.vol = black_scholes_vol(spec)
        self.mc = None
        if cfg.delta_source == "yosida":
            self.mc = MollifiedCoefficients(spec, cfg.n, max_dim=cfg.max_dim)

    def _sim(self, date: int) -> SimConfig:
        seed = derive_seed(self.cfg.seed, "delta", date)
        return SimConfig(dt=self.dt, paths=self.cfg.delta_paths, seed=seed, stream="delta",
                         threads=self.cfg.threads)

    def price(self, x: LiftedState) -> float:
        spec, c = self.spec, self.cfg
        if c.delta_source == "analytic":
            return float(bs_price(x.present[0], spec.payoff.strike, spec.rate, self.vol, spec.horizon,
                                  spec.payoff.kind))
        sim = self._sim(-1)
        if c.delta_source == "yosida":
            return value_n(c.n, 0.0, x, spec, self.mc, sim, discount=True).mean
        return value(0.0, x, spec, sim).mean

    def deltas(self, date: int, t: float, x0s, x1s) -> np.ndarray:
        """Array (paths, m) of derivatives along each present coordinate."""
        spec, c = self.spec, self.cfg
        if c.delta_source == "analytic":
            d = bs_delta(x0s[:, 0], spec.payoff.strike, spec.rate, self.vol, spec.horizon - t,
                         spec.payoff.kind)
            return np.asarray(d, dtype=float)[:, None]
        sim = self._sim(date)
        out = np.empty((len(x0s), spec.m))
        for j, (e0, e1) in enumerate(_units(spec)):
            z0 = np.broadcast_to(e0, x0s.shape).copy()
            z1 = np.broadcast_to(e1, x1s.shape).copy()
            if c.delta_source == "yosida":
                est = gradient_n(c.n, t, (x0s, x1s), (z0, z1), spec, self.mc, sim, discount=True)
                out[:, j] = [e[0] for e in est]
            else:
                direction = LiftedState(e0, e1, spec.grid)
                est = _batched_mild_delta(t, x0s, x1s, direction, spec, sim)
                out[:, j] = est
        return out


def _batched_mild_delta(t, x0s, x1s, direction, spec, sim):
    est = mc_delta(t, (x0s, x1s), spec, sim, direction=direction)
    return np.array([e.mean for e in est])


def hedge_backtest(x: LiftedState, spec: ModelSpec, cfg: HedgeConfig) -> HedgeResult:
    """Run the hedge on ``cfg.paths`` market paths simulated by the splitting scheme.

    Market noise uses its own stream, so markets are shared across runs that
    differ only in rebalance count or delta settings.
    """
    steps = cfg.steps
    dt = spec.horizon / steps
    every = steps // cfg.rebalances
    dates = np.arange(cfg.rebalances) * every
    need_states = cfg.delta_source != "analytic"
    market = simulate_mild(0.0, x, spec, SimConfig(dt=dt, paths=cfg.paths, seed=cfg.seed, stream="market",
                                                   threads=cfg.threads),
                           record_present=True, record_steps=list(dates) if need_states else None)
    R = market.present                                   # (paths, steps + 1, m)
    payoff = spec.payoff.arrays(market.terminal_present, market.terminal_history)
    src = _DeltaSource(spec, cfg, dt)
    price = src.price(x)
    V = np.full(cfg.paths, price)
    flagged = np.zeros(cfg.paths, bool)
    resid = 0.0
    trace = {"time": [], "risky": [], "h_risky": [], "h_bond": [], "value": []}
    for i, k in enumerate(dates):
        s = k * dt
        bond = math.exp(spec.rate * s)
        Rs = R[:, k]
        if need_states:
            x0s, x1s = market.states_present[:, i], market.states_history[:, i]
        else:
            x0s, x1s = Rs, None
        h_R = src.deltas(i, s, x0s, x1s)
        bad = ~np.all(np.isfinite(h_R), axis=1)
        flagged |= bad
        h_R[bad] = 0.0
        h_P = (V - np.sum(h_R * Rs, axis=1)) / bond
        resid = max(resid, float(np.max(np.abs(h_P * bond + np.sum(h_R * Rs, axis=1) - V))))
        trace["time"].append(s)
        trace["risky"].append(float(Rs[0, 0]))
        trace["h_risky"].append(float(h_R[0, 0]))
        trace["h_bond"].append(float(h_P[0]))
        trace["value"].append(float(V[0]))
        k2 = k + every
        bond2 = math.exp(spec.rate * k2 * dt)
        V_new = h_P * bond2 + np.sum(h_R * R[:, k2], axis=1)
        gain = h_P * (bond2 - bond) + np.sum(h_R * (R[:, k2] - Rs), axis=1)
        resid = max(resid, float(np.max(np.abs(V_new - V - gain))))
        V = V_new
    errors = V - payoff
    errors[flagged] = np.nan
    return HedgeResult(errors, flagged, cfg.rebalances, price, trace, resid)


def replication_error_curve(x: LiftedState, spec: ModelSpec, rebalance_list, cfg: HedgeConfig):
    """Rows ``(rebalances, rmse, mean error, rmse standard error)`` on shared market paths."""
    rebalance_list = [int(r) for r in rebalance_list]
    if not rebalance_list:
        raise ConfigError("rebalance list is empty")
    steps = cfg.market_steps or math.lcm(*rebalance_list, 256)
    rows = []
    for r in rebalance_list:
        c = HedgeConfig(r, cfg.paths, cfg.seed, cfg.delta_source, cfg.delta_paths, cfg.n, steps,
                        cfg.max_dim, cfg.threads)
        res = hedge_backtest(x, spec, c)
        rows.append((r, res.rmse, res.mean, res.rmse_se))
    return rows
