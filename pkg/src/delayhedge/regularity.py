"""Parabolic C^{1+alpha} seminorms of value-function sections on grids."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coefficients import MollifiedCoefficients, ModelSpec
from .errors import ConfigError, DomainError
from .sde_engine import SimConfig
from .section_pde import (
    SectionDomain,
    ValueSurface,
    monte_carlo_surface,
    section_coefficients,
    solve_section,
)
from .value_function import SmoothedPayoff

EXACT_PAIR_LIMIT = 10_000
# vectorised pow may differ from the scalar libm result in the last bit, so
# candidates this close to the block maximum are re-evaluated one by one
_RESCORE_TOL = 1e-12


def gradient_surface(v: ValueSurface) -> np.ndarray:
    """Spatial gradient, shape (time_nodes, nodes, m).

    Central differences inside, first-order one-sided differences on the edges.
    """
    d = v.domain
    if d.space_nodes < 3:
        raise DomainError("gradient needs at least 3 nodes per axis")
    grid = v.grid_values()
    h = d.spacing
    parts = []
    for ax in range(d.m):
        g = np.gradient(grid, h, axis=1 + ax, edge_order=1)
        parts.append(g.reshape(d.time_nodes, -1))
    return np.stack(parts, axis=-1)


def _flatten(v: ValueSurface, grad: np.ndarray):
    d = v.domain
    pts = d.points()
    nt, nodes = v.values.shape
    times = np.repeat(d.times, nodes)
    space = np.tile(pts, (nt, 1))
    return times, space, v.values.reshape(-1), grad.reshape(nt * nodes, -1)


class HolderEstimate:
    """Unpacks as ``(value, argmax_pair)``; also carries the three terms."""

    def __init__(self, value, pair, sup, grad_sup, quotient):
        self.value = float(value)
        self.pair = pair
        self.sup = float(sup)
        self.grad_sup = float(grad_sup)
        self.quotient = float(quotient)

    def __iter__(self):
        yield self.value
        yield self.pair

    def __repr__(self):
        return (f"HolderEstimate(value={self.value:.6g}, sup={self.sup:.6g}, "
                f"grad_sup={self.grad_sup:.6g}, quotient={self.quotient:.6g}, pair={self.pair})")


def _quotients(ti, xi, ui, gi, ts, xs, us, expo):
    """Quotients for anchors (rows) against partners (columns)."""
    inc = us[None, :] - ui[:, None]
    lin = np.zeros_like(inc)
    dist2 = np.zeros_like(inc)
    for k in range(xi.shape[1]):
        dx = xs[None, :, k] - xi[:, None, k]
        lin = lin + gi[:, None, k] * dx
        dist2 = dist2 + dx * dx
    base = np.abs(ts[None, :] - ti[:, None]) + dist2
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.abs(inc - lin) / np.power(base, expo)
    q[base == 0] = -np.inf
    return q


def _scalar_quotient(a, b, t, x, u, gr, expo) -> float:
    lin = 0.0
    dist2 = 0.0
    for k in range(x.shape[1]):
        dx = float(x[b, k]) - float(x[a, k])
        lin = lin + float(gr[a, k]) * dx
        dist2 = dist2 + dx * dx
    base = abs(float(t[b]) - float(t[a])) + dist2
    if base == 0:
        return -math.inf
    return abs(float(u[b]) - float(u[a]) - lin) / math.pow(base, expo)


def _best_pair(q, anchors, partners, t, x, u, gr, expo):
    """Largest quotient in a block, scored by scalar arithmetic; first pair wins ties."""
    top = float(np.max(q))
    if not np.isfinite(top):
        return -math.inf, None
    if top <= 0.0:
        i, j = np.unravel_index(int(np.argmax(q)), q.shape)
        b = partners[i][j] if partners.ndim == 2 else partners[j]
        return top, (int(anchors[i]), int(b))
    rows, cols = np.nonzero(q >= top - _RESCORE_TOL * abs(top))
    best, arg = -math.inf, None
    for i, j in zip(rows, cols):
        a, b = int(anchors[i]), int(partners[i][j] if partners.ndim == 2 else partners[j])
        val = _scalar_quotient(a, b, t, x, u, gr, expo)
        if val > best:
            best, arg = val, (a, b)
    return best, arg


def holder_seminorm(v: ValueSurface, g: np.ndarray, alpha: float, max_points: int = EXACT_PAIR_LIMIT,
                    pair_samples: int = 2_000_000, seed: int = 0, threads: int = 1,
                    block: int = 256) -> HolderEstimate:
    """``|v|_inf + |Dv|_inf + max quotient`` over ordered pairs of grid points.

    Pairs are enumerated exactly up to ``max_points`` points; beyond that each
    anchor gets an equal share of ``pair_samples`` random partners drawn with
    a fixed seed.  Ties resolve to the first pair in row-major (anchor,
    partner) order.
    """
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    t, x, u, gr = _flatten(v, g)
    npts = u.size
    sup = float(np.max(np.abs(u))) if npts else 0.0
    gsup = float(np.max(np.sqrt(np.sum(gr * gr, axis=1)))) if npts else 0.0
    expo = (1.0 + alpha) / 2.0
    if npts < 2:
        return HolderEstimate(sup + gsup, None, sup, gsup, 0.0)

    if npts <= max_points:
        starts = list(range(0, npts, block))

        every = np.arange(npts)

        def work(s):
            sl = slice(s, min(s + block, npts))
            q = _quotients(t[sl], x[sl], u[sl], gr[sl], t, x, u, expo)
            return _best_pair(q, every[sl], every, t, x, u, gr, expo)
    else:
        per = max(1, pair_samples // npts)
        rng = np.random.default_rng(seed)
        partners = rng.integers(0, npts, size=(npts, per))
        starts = list(range(0, npts, block))

        def work(s):
            e = min(s + block, npts)
            best, arg = -np.inf, None
            for a in range(s, e):
                cols = partners[a]
                q = _quotients(t[a:a + 1], x[a:a + 1], u[a:a + 1], gr[a:a + 1],
                               t[cols], x[cols], u[cols], expo)
                val, pr = _best_pair(q, np.array([a]), cols[None, :], t, x, u, gr, expo)
                if val > best:
                    best, arg = val, pr
            return best, arg

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(work, starts))
    else:
        results = [work(s) for s in starts]
    best, arg = -np.inf, None
    for val, pr in results:  # block order keeps the row-major tie rule
        if val > best:
            best, arg = val, pr
    quot = max(best, 0.0)
    pair = None
    if arg is not None:
        a, b = arg
        pair = ((float(t[a]), tuple(float(c) for c in x[a])), (float(t[b]), tuple(float(c) for c in x[b])))
    return HolderEstimate(sup + gsup + quot, pair, sup, gsup, quot)


# ---------------------------------------------------------------- sweep

@dataclass(frozen=True)
class InnerCylinder:
    """Sub-cylinder ``[t_start, t_end] x cube(center, radius)`` in absolute coordinates."""

    t_start: float
    t_end: float
    radius: float

    def check_inside(self, dom: SectionDomain):
        if not (dom.t_start < self.t_start < self.t_end < dom.t_end and 0 < self.radius < dom.radius):
            raise ConfigError("inner cylinder must lie strictly inside the section domain")

    def restrict(self, v: ValueSurface, grad: np.ndarray):
        """Crop a surface and its gradient to the nodes inside this cylinder."""
        d = v.domain
        tol = 1e-9
        tsel = (d.times >= self.t_start - tol) & (d.times <= self.t_end + tol)
        ax = d.axis
        xsel = np.abs(ax) <= self.radius + tol
        if tsel.sum() < 2 or xsel.sum() < 3:
            raise ConfigError("inner cylinder needs at least 2 time nodes and 3 space nodes per axis")
        times = d.times[tsel]
        sub = SectionDomain(d.frozen_history, float(times[0]), float(times[-1]), d.center,
                            float(ax[xsel][-1]), int(xsel.sum()), int(tsel.sum()))
        shape = (d.time_nodes,) + (d.space_nodes,) * d.m
        idx = np.ix_(tsel, *([xsel] * d.m))
        vals = v.values.reshape(shape)[idx].reshape(int(tsel.sum()), -1)
        g = grad.reshape(shape + (d.m,))[idx].reshape(int(tsel.sum()), -1, d.m)
        return ValueSurface(sub, vals, v.source), g


@dataclass
class HolderRow:
    n: int
    sup: float
    grad_sup: float
    seminorm: float
    argmax_pair: tuple | None


@dataclass
class HolderReport:
    alpha: float
    domain: InnerCylinder
    source: str
    rows: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def spread(self) -> float:
        """Largest over smallest seminorm across rows."""
        s = self.column("seminorm")
        return float(s.max() / s.min()) if len(s) and s.min() > 0 else float("inf")


def section_surface(n: int, dom: SectionDomain, spec: ModelSpec, mc: MollifiedCoefficients,
                    cfg: SimConfig, beta_cfg: SimConfig | None = None) -> ValueSurface:
    hn = SmoothedPayoff(spec.payoff, n)
    coeffs = section_coefficients(n, dom, spec, mc, beta_cfg or cfg, smoothed=hn)
    bsurf = monte_carlo_surface(n, dom, spec, mc, cfg, "boundary", smoothed=hn)
    return solve_section(coeffs, bsurf, propagate_errors=False)


def regularity_sweep(n_list, dom: SectionDomain, alpha: float, spec: ModelSpec, cfg: SimConfig,
                     inner: InnerCylinder, mc_factory=None, source: str = "pde",
                     beta_cfg: SimConfig | None = None, max_dim: int = 4) -> HolderReport:
    """Seminorm of ``v_n`` on ``inner`` for each ``n``.

    ``source='pde'`` solves the section (gradient from the solved surface);
    ``source='monte-carlo'`` estimates every node directly.  A finite sweep
    can reveal blow-up in ``n`` but cannot certify a bound for the limit.
    """
    inner.check_inside(dom)
    if source not in ("pde", "monte-carlo"):
        raise ConfigError(f"unknown surface source {source!r}")
    factory = mc_factory or (lambda n: MollifiedCoefficients(spec, n, max_dim=max_dim))
    report = HolderReport(alpha, inner, source)
    for n in n_list:
        mc = factory(n)
        if source == "pde":
            surf = section_surface(n, dom, spec, mc, cfg, beta_cfg)
        else:
            surf = monte_carlo_surface(n, dom, spec, mc, cfg, "all")
        grad = gradient_surface(surf)
        sub, g = inner.restrict(surf, grad)
        est = holder_seminorm(sub, g, alpha, threads=cfg.threads)
        report.rows.append(HolderRow(int(n), est.sup, est.grad_sup, est.value, est.pair))
    return report
