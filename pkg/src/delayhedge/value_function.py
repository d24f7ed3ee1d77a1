"""Monte Carlo value functions, payoff smoothing and pathwise gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import ConstantPayoff, MollifiedCoefficients, ModelSpec, Payoff
from .errors import ConfigError
from .hilbert_state import B_MU, BNormOperator, LiftedState, b_norm, generator_apply
from .sde_engine import SimConfig, simulate_mild, simulate_yosida


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    std_error: float
    paths: int
    scheme: str
    discounted: bool

    @classmethod
    def from_samples(cls, samples, scheme: str, discounted: bool) -> "ValueEstimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(samples.mean()), se, n, scheme, discounted)


def _estimates(samples, P, scheme, discounted):
    """Per-state estimates from state-major samples."""
    s = np.asarray(samples).reshape(-1, P)
    mean = s.mean(axis=1)
    se = s.std(axis=1, ddof=1) / math.sqrt(P) if P > 1 else np.zeros(len(s))
    return [ValueEstimate(float(a), float(b), P, scheme, discounted) for a, b in zip(mean, se)]


# ---------------------------------------------------------------- smoothing

class SmoothedPayoff:
    """Inf-sup convolution of a payoff in the weak geometry.

    ``h_n(x) = sup_z inf_y [h(y) + |y - z|_B^2 / (2 eps) - |z - x|_B^2 / (2 eps)]``
    with ``eps = 1/n``.  The search runs over a symmetric cloud of points
    ``x + a d`` along the weak-norm unit direction ``d`` that raises the
    payoff's pairing fastest, with offsets up to twice ``eps * slope``.
    Because the payoff only reads the pairing ``u = <x, k>``, the envelope is
    a function of ``u`` alone.
    """

    def __init__(self, payoff: Payoff, n: int, cloud: int = 20):
        if cloud < 2:
            raise ConfigError("search cloud must have at least 2 points per side")
        self.base = payoff
        self.n = int(n)
        self.eps = 1.0 / self.n
        op = BNormOperator(payoff.grid)
        k = payoff.kernel.state
        if payoff.is_constant or not np.any(k.to_row()):
            self.slope = 0.0
            self.direction = LiftedState.zeros(payoff.grid, k.dim)
        else:
            d = op.adjoint_apply(k)
            d = generator_apply(d) - B_MU * d  # (A - 1)(A - 1)^* k
            if payoff.kernel.pair(d.present, d.history) < 0:
                d = -d
            d = d * (1.0 / b_norm(d))
            self.direction = d
            self.slope = float(payoff.kernel.pair(d.present, d.history))
        half = 2 * (cloud // 2)
        self.radius = 2.0 * self.eps * self.slope
        self.offsets = np.linspace(-self.radius, self.radius, 2 * half + 1)
        if self.offsets.size == 0:
            raise ConfigError("search cloud is empty")

    @property
    def search_radius(self) -> float:
        return self.radius

    def _psi(self, z):
        kind = self.base.kind
        if kind == "call":
            return np.maximum(z, 0.0)
        if kind == "put":
            return np.maximum(-z, 0.0)
        return z

    def profile(self, u) -> np.ndarray:
        """Envelope as a function of the pairing ``u``."""
        u = np.asarray(u, dtype=float)
        if self.slope == 0.0:
            return self._psi(u - self.base.strike)
        a = self.offsets
        b = self.offsets
        quad_b = b ** 2 / (2 * self.eps)
        quad_a = a ** 2 / (2 * self.eps)
        out = np.empty(u.shape)
        flat_u, flat_o = u.reshape(-1), out.reshape(-1)
        step = 2048
        for s in range(0, flat_u.size, step):
            uu = flat_u[s:s + step, None, None]
            z = uu + (a[None, :, None] + b[None, None, :]) * self.slope - self.base.strike
            inner = np.min(self._psi(z) + quad_b[None, None, :], axis=2)
            flat_o[s:s + step] = np.max(inner - quad_a[None, :], axis=1)
        return out

    def arrays(self, x0, x1) -> np.ndarray:
        return self.profile(self.base.kernel.pair(x0, x1))

    def directional(self, x0, x1, d0, d1, step: float | None = None) -> np.ndarray:
        """Derivative along ``(d0, d1)`` by central differences of the profile."""
        u = self.base.kernel.pair(x0, x1)
        du = self.base.kernel.pair(d0, d1)
        if self.slope == 0.0:
            if self.base.is_constant:
                return np.zeros_like(u)
            return self.base.slope(x0, x1) * du
        h = step if step is not None else 0.25 * self.radius / (len(self.offsets) // 2)
        return (self.profile(u + h) - self.profile(u - h)) / (2 * h) * du

    def __call__(self, x: LiftedState) -> float:
        return float(self.arrays(x.present, x.history))


def smooth_payoff(h: Payoff, n: int, probe_states=None, cloud: int = 20) -> SmoothedPayoff:
    """Build the smoothed payoff; probe states, if given, are checked for finiteness."""
    if probe_states is not None:
        for p in probe_states:
            if not (np.all(np.isfinite(p.present)) and np.all(np.isfinite(p.history))):
                raise ConfigError("probe states must be finite")
    return SmoothedPayoff(h, n, cloud)


# ---------------------------------------------------------------- values

def _discount(spec: ModelSpec, t: float, flag: bool) -> float:
    return math.exp(-spec.rate * (spec.horizon - t)) if flag else 1.0


def value(t: float, x, spec: ModelSpec, cfg: SimConfig, discount: bool = True):
    """Discounted (by default) mean payoff under the splitting scheme.

    ``x`` may be a single state or a batch ``(x0s, x1s)``; a batch returns a
    list of estimates sharing common random numbers.
    """
    ens = simulate_mild(t, x, spec, cfg.with_(scheme="mild"))
    pay = spec.payoff.arrays(ens.terminal_present, ens.terminal_history) * _discount(spec, t, discount)
    est = _estimates(pay, cfg.paths, "mild", discount)
    return est[0] if isinstance(x, LiftedState) else est


def delta(t: float, x, spec: ModelSpec, cfg: SimConfig, direction: LiftedState | None = None,
          discount: bool = True):
    """Pathwise derivative of :func:`value` along ``direction`` (default: unit present bump)."""
    if direction is None:
        e0 = np.zeros(spec.m)
        e0[0] = 1.0
        direction = LiftedState(e0, np.zeros((spec.m, spec.grid.nodes)), spec.grid)
    ens, tan = simulate_mild(t, x, spec, cfg.with_(scheme="mild"), tangent=direction)
    d = spec.payoff.directional(ens.terminal_present, ens.terminal_history,
                                tan.terminal_present, tan.terminal_history)
    est = _estimates(d * _discount(spec, t, discount), cfg.paths, "mild", discount)
    return est[0] if isinstance(x, LiftedState) else est


def value_n(n: int, t: float, x, spec: ModelSpec, mc: MollifiedCoefficients, cfg: SimConfig,
            discount: bool = False, smoothed: SmoothedPayoff | None = None):
    """Mean smoothed payoff under the Yosida scheme (undiscounted by default)."""
    hn = smoothed or SmoothedPayoff(spec.payoff, n)
    ens = simulate_yosida(n, t, x, spec, mc, cfg.with_(scheme="yosida", n=n))
    pay = hn.arrays(ens.terminal_present, ens.terminal_history) * _discount(spec, t, discount)
    est = _estimates(pay, cfg.paths, f"yosida({n})", discount)
    return est[0] if isinstance(x, LiftedState) else est


def gradient_n(n: int, t: float, x, directions, spec: ModelSpec, mc: MollifiedCoefficients,
               cfg: SimConfig, discount: bool = False, smoothed: SmoothedPayoff | None = None):
    """Directional derivatives ``E[D h_n(X_T) Z_T]`` with common random numbers.

    For a single state ``directions`` is a list of states and the result is a
    list of ``(estimate, std_error)``.  For a batch ``(x0s, x1s)`` pass one
    batch of directions ``(z0s, z1s)``; the result is one pair per state.
    """
    hn = smoothed or SmoothedPayoff(spec.payoff, n)
    disc = _discount(spec, t, discount)
    ycfg = cfg.with_(scheme="yosida", n=n)

    def one(direction):
        ens, tan = simulate_yosida(n, t, x, spec, mc, ycfg, tangent=direction)
        g = hn.directional(ens.terminal_present, ens.terminal_history,
                           tan.terminal_present, tan.terminal_history) * disc
        return [(e.mean, e.std_error) for e in _estimates(g, cfg.paths, ycfg.scheme, discount)]

    if isinstance(x, LiftedState):
        return [one(d)[0] for d in directions]
    return one(directions)


def gradient_bound_report(n_list, samples, spec: ModelSpec, cfg: SimConfig, max_dim: int = 4,
                          directions=None):
    """Rows ``(n, max |grad u_n| over samples, H-unit directions, weak-unit directions)``."""
    rows = []
    for n in n_list:
        mc = MollifiedCoefficients(spec, n, max_dim=max_dim)
        dirs = directions if directions is not None else mc.basis
        best_h = best_b = 0.0
        for t, x in samples:
            vals = gradient_n(n, t, x, dirs, spec, mc, cfg)
            for (g, _), d in zip(vals, dirs):
                hn = math.sqrt(max(float(np.sum(d.present ** 2) + np.sum(d.history ** 2 * d.grid.weights)), 0.0))
                bn = b_norm(d)
                if hn > 0:
                    best_h = max(best_h, abs(g) / hn)
                if bn > 0:
                    best_b = max(best_b, abs(g) / bn)
        rows.append((int(n), best_h, best_b))
    return rows
