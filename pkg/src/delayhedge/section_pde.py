"""Finite-dimensional section of the Kolmogorov equation.

With the past frozen at ``xbar1`` the smoothed value ``v(t, x0) = u_n(t,
(x0, xbar1))`` solves ``-v_t - 1/2 Tr(a D^2 v) - beta = 0`` on a cylinder
``[c, d) x B(x0*, eps)``.  Coefficients come from the mollified model and
Monte Carlo gradients; the backward problem is solved by a theta scheme with
Dirichlet data on the parabolic boundary.

The spatial domain is the max-norm ball (a cube) so that it is a union of
grid cells; for ``m = 1`` this is the interval itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .coefficients import MollifiedCoefficients, ModelSpec
from .errors import ConfigError, NondegeneracyError, NumericalError
from .hilbert_state import stack
from .sde_engine import SimConfig
from .semigroup_ops import yosida_matrix
from .value_function import SmoothedPayoff, gradient_n, value_n

MAX_SECTION_DIM = 3


@dataclass(frozen=True)
class SectionDomain:
    """Cylinder ``[t_start, t_end) x cube(center, radius)`` with a frozen past."""

    frozen_history: np.ndarray
    t_start: float
    t_end: float
    center: tuple
    radius: float
    space_nodes: int = 17
    time_nodes: int = 17

    def __post_init__(self):
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        object.__setattr__(self, "center", center)
        hist = np.atleast_2d(np.asarray(self.frozen_history, dtype=float))
        hist.setflags(write=False)
        object.__setattr__(self, "frozen_history", hist)
        if not 0 < self.t_start < self.t_end:
            raise ConfigError("section times must satisfy 0 < t_start < t_end")
        if self.radius <= 0:
            raise ConfigError("section radius must be positive")
        if self.space_nodes < 3 or self.time_nodes < 2:
            raise ConfigError("section grid needs >= 3 space nodes and >= 2 time nodes")
        if len(center) > MAX_SECTION_DIM:
            raise ConfigError(f"section dimension {len(center)} exceeds {MAX_SECTION_DIM}")
        if hist.shape[0] != len(center):
            raise ConfigError("frozen history must have one row per coordinate")

    @property
    def m(self) -> int:
        return len(self.center)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.time_nodes)

    @property
    def axis(self) -> np.ndarray:
        """Common 1-d node set; shifted by each center coordinate."""
        return np.linspace(-self.radius, self.radius, self.space_nodes)

    @property
    def spacing(self) -> float:
        return 2.0 * self.radius / (self.space_nodes - 1)

    def points(self) -> np.ndarray:
        """All spatial nodes, row-major, shape (nodes, m)."""
        axes = [c + self.axis for c in self.center]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def interior_mask(self) -> np.ndarray:
        idx = np.indices((self.space_nodes,) * self.m).reshape(self.m, -1).T
        return np.all((idx > 0) & (idx < self.space_nodes - 1), axis=1)

    def states(self):
        """Initial-state batch ``(x0s, x1s)`` for all spatial nodes."""
        pts = self.points()
        x1 = np.broadcast_to(self.frozen_history, (len(pts),) + self.frozen_history.shape)
        return pts, np.array(x1)


@dataclass
class SectionCoefficients:
    domain: SectionDomain
    a: np.ndarray            # (time_nodes, nodes, m, m)
    beta: np.ndarray         # (time_nodes, nodes); NaN where not estimated
    beta_se: np.ndarray
    ellipticity: tuple       # (smallest, largest eigenvalue over the cylinder)


@dataclass
class ValueSurface:
    domain: SectionDomain
    values: np.ndarray       # (time_nodes, nodes)
    source: str
    std_error: np.ndarray | None = None

    @property
    def times(self):
        return self.domain.times

    def grid_values(self) -> np.ndarray:
        """Values reshaped to (time_nodes, space_nodes, ...)."""
        d = self.domain
        return self.values.reshape((d.time_nodes,) + (d.space_nodes,) * d.m)


# ---------------------------------------------------------------- coefficients

def section_drift(n: int, t: float, x0s, x1s, mc: MollifiedCoefficients):
    """``A_n x + G_n(t, x)`` for a batch of states, returned as (x0, x1) arrays."""
    s = stack(x0s, x1s)
    w = s @ yosida_matrix(n, mc.spec.grid).T + mc.drift_from_coords(mc.project_stacked(s))
    return w[..., 0], w[..., 1:]


def section_coefficients(n: int, dom: SectionDomain, spec: ModelSpec, mc: MollifiedCoefficients,
                         cfg: SimConfig, beta_nodes: str = "interior", gradient_field=None,
                         smoothed: SmoothedPayoff | None = None) -> SectionCoefficients:
    """Diffusion matrix and first-order term on every node of the cylinder.

    ``gradient_field``, if given, replaces the Monte Carlo gradient by a
    callable ``(t, x0s, x1s, z0s, z1s) -> (values, std_errors)``.
    """
    if dom.m != spec.m:
        raise ConfigError("section dimension differs from the model dimension")
    if dom.frozen_history.shape != (spec.m, spec.grid.nodes):
        raise ConfigError("frozen history does not match the model grid")
    x0s, x1s = dom.states()
    nodes = len(x0s)
    mask = dom.interior_mask() if beta_nodes == "interior" else np.ones(nodes, bool)
    a = np.empty((dom.time_nodes, nodes, spec.m, spec.m))
    beta = np.full((dom.time_nodes, nodes), np.nan)
    beta_se = np.zeros((dom.time_nodes, nodes))
    hn = smoothed or SmoothedPayoff(spec.payoff, n)
    for j, t in enumerate(dom.times):
        sig = mc.sigma_arrays(t, x0s, x1s)
        a[j] = sig @ np.swapaxes(sig, -1, -2)
        w0, w1 = section_drift(n, t, x0s[mask], x1s[mask], mc)
        if gradient_field is not None:
            vals, ses = gradient_field(t, x0s[mask], x1s[mask], w0, w1)
        elif spec.payoff.is_constant:
            vals, ses = np.zeros(mask.sum()), np.zeros(mask.sum())
        else:
            est = gradient_n(n, t, (x0s[mask], x1s[mask]), (w0, w1), spec, mc, cfg, smoothed=hn)
            vals = np.array([e[0] for e in est])
            ses = np.array([e[1] for e in est])
        beta[j, mask] = vals
        beta_se[j, mask] = ses
    eig = np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, -1, -2)))
    lo, hi = float(eig.min()), float(eig.max())
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(beta[:, mask]))):
        raise NumericalError("section coefficients are not finite")
    if lo <= 0:
        j, i = np.unravel_index(np.argmin(eig.min(axis=-1)), eig.shape[:2])
        raise NondegeneracyError(
            f"diffusion matrix not positive definite at t={dom.times[j]:.6g}, x0={x0s[i].tolist()}"
        )
    return SectionCoefficients(dom, a, beta, beta_se, (lo, hi))


# ---------------------------------------------------------------- solver

def _operator(dom: SectionDomain, a_level: np.ndarray) -> sparse.csr_matrix:
    """``1/2 Tr(a D^2 .)`` on all nodes; rows of boundary nodes are zero."""
    m, nx, h = dom.m, dom.space_nodes, dom.spacing
    nodes = nx ** m
    shape = (nx,) * m
    idx = np.arange(nodes).reshape(shape)
    interior = dom.interior_mask()
    rows, cols, vals = [], [], []
    inner = np.nonzero(interior)[0]
    multi = np.array(np.unravel_index(inner, shape)).T
    for i in range(m):
        for k in range(m):
            coef = 0.5 * a_level[inner, i, k]
            if i == k:
                for off, wgt in ((-1, 1.0), (0, -2.0), (1, 1.0)):
                    nb = multi.copy()
                    nb[:, i] += off
                    rows.append(inner)
                    cols.append(idx[tuple(nb.T)])
                    vals.append(coef * wgt / h ** 2)
            else:
                for oi, ok, wgt in ((1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)):
                    nb = multi.copy()
                    nb[:, i] += oi
                    nb[:, k] += ok
                    rows.append(inner)
                    cols.append(idx[tuple(nb.T)])
                    vals.append(coef * wgt / (4 * h * h))
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nodes, nodes)
    )


def choose_theta(coeffs: SectionCoefficients, threshold: float = 0.5) -> float:
    """Crank-Nicolson unless the diffusion field jumps by more than ``threshold`` (relative)
    between neighbouring nodes, in which case fall back to the implicit scheme."""
    dom = coeffs.domain
    a = coeffs.a.reshape((dom.time_nodes,) + (dom.space_nodes,) * dom.m + (dom.m, dom.m))
    scale = max(float(np.max(np.abs(a))), 1e-300)
    jump = 0.0
    for ax in range(1, dom.m + 1):
        jump = max(jump, float(np.max(np.abs(np.diff(a, axis=ax)))) / scale)
    return 0.5 if jump <= threshold else 1.0


def _solve_linear(coeffs: SectionCoefficients, boundary: np.ndarray, beta: np.ndarray,
                  theta: float, cond_limit: float = 1e12) -> np.ndarray:
    """Core backward sweep on stacked inputs.

    ``boundary`` and ``beta`` have shape (time_nodes, nodes, R); boundary
    entries are read at boundary nodes and on the terminal slice only.
    """
    dom = coeffs.domain
    nt = dom.time_nodes
    interior = dom.interior_mask()
    inn = np.nonzero(interior)[0]
    bnd = np.nonzero(~interior)[0]
    times = dom.times
    out = np.empty_like(boundary)
    out[-1] = boundary[-1]
    ops = [_operator(dom, coeffs.a[j]) for j in range(nt)]
    for j in range(nt - 2, -1, -1):
        dt = times[j + 1] - times[j]
        L_now = ops[j]
        L_next = ops[j + 1]
        lhs = (sparse.identity(len(inn)) - theta * dt * L_now[inn][:, inn]).tocsc()
        if len(inn) <= 2000:
            cond = np.linalg.cond(lhs.toarray())
            if not np.isfinite(cond) or cond > cond_limit:
                raise NumericalError(f"ill-conditioned section system at t={times[j]:.6g} (cond={cond:.3g})")
        rhs = out[j + 1][inn] + (1 - theta) * dt * (L_next[inn] @ out[j + 1])
        rhs = rhs + dt * (theta * beta[j][inn] + (1 - theta) * beta[j + 1][inn])
        rhs = rhs + theta * dt * (L_now[inn][:, bnd] @ boundary[j][bnd])
        try:
            sol = splu(lhs).solve(np.ascontiguousarray(rhs))
        except RuntimeError as exc:
            raise NumericalError(f"section linear solve failed at t={times[j]:.6g}") from exc
        out[j][inn] = sol
        out[j][bnd] = boundary[j][bnd]
    return out


def solve_section(coeffs: SectionCoefficients, boundary: ValueSurface, theta: float | None = None,
                  propagate_errors: bool = True) -> ValueSurface:
    """Backward theta scheme; boundary values come from ``boundary`` on the parabolic boundary.

    When the inputs carry standard errors, the solution's error bar is the
    sum of |linear response| x input standard error over all noisy inputs.
    Monte Carlo inputs share random numbers, so they are correlated; this
    sum bounds the standard deviation of the solve whatever the correlation.
    """
    dom = coeffs.domain
    if boundary.values.shape != (dom.time_nodes, dom.space_nodes ** dom.m):
        raise ConfigError("boundary surface does not match the section grid")
    interior = dom.interior_mask()
    if not np.all(np.isfinite(boundary.values[:, ~interior])) or not np.all(np.isfinite(boundary.values[-1])):
        raise ConfigError("boundary data must cover the whole parabolic boundary")
    theta = choose_theta(coeffs) if theta is None else float(theta)
    beta = np.where(np.isnan(coeffs.beta), 0.0, coeffs.beta)
    vals = _solve_linear(coeffs, boundary.values[..., None], beta[..., None], theta)[..., 0]
    se = None
    if propagate_errors:
        se = _propagate(coeffs, boundary, theta)
    return ValueSurface(dom, vals, "pde", se)


def _propagate(coeffs: SectionCoefficients, boundary: ValueSurface, theta: float) -> np.ndarray:
    dom = coeffs.domain
    nt, nodes = dom.time_nodes, dom.space_nodes ** dom.m
    interior = dom.interior_mask()
    b_se = np.zeros((nt, nodes)) if boundary.std_error is None else np.nan_to_num(boundary.std_error)
    b_pos = [(j, i) for j in range(nt) for i in range(nodes)
             if (j == nt - 1 or not interior[i]) and b_se[j, i] > 0]
    q_pos = [(j, i) for j in range(nt) for i in range(nodes) if coeffs.beta_se[j, i] > 0]
    total = len(b_pos) + len(q_pos)
    if total == 0:
        return np.zeros((nt, nodes))
    bnd = np.zeros((nt, nodes, total))
    src = np.zeros((nt, nodes, total))
    sig = np.empty(total)
    for r, (j, i) in enumerate(b_pos):
        bnd[j, i, r] = 1.0
        sig[r] = b_se[j, i]
    for r, (j, i) in enumerate(q_pos, start=len(b_pos)):
        src[j, i, r] = 1.0
        sig[r] = coeffs.beta_se[j, i]
    resp = _solve_linear(coeffs, bnd, src, theta)
    return np.einsum("tnr,r->tn", np.abs(resp), sig)


# ---------------------------------------------------------------- Monte Carlo side

def monte_carlo_surface(n: int, dom: SectionDomain, spec: ModelSpec, mc: MollifiedCoefficients,
                        cfg: SimConfig, where: str = "all", smoothed: SmoothedPayoff | None = None) -> ValueSurface:
    """``u_n`` at section nodes by Monte Carlo; ``where`` is 'all', 'boundary' or 'interior'.

    Nodes that are not requested hold NaN.
    """
    x0s, x1s = dom.states()
    nodes = len(x0s)
    interior = dom.interior_mask()
    hn = smoothed or SmoothedPayoff(spec.payoff, n)
    vals = np.full((dom.time_nodes, nodes), np.nan)
    ses = np.full((dom.time_nodes, nodes), np.nan)
    for j, t in enumerate(dom.times):
        last = j == dom.time_nodes - 1
        if where == "all":
            sel = np.ones(nodes, bool)
        elif where == "boundary":
            sel = np.ones(nodes, bool) if last else ~interior
        elif where == "interior":
            sel = np.zeros(nodes, bool) if last else interior
        else:
            raise ConfigError(f"unknown node selection {where!r}")
        if not sel.any():
            continue
        est = value_n(n, t, (x0s[sel], x1s[sel]), spec, mc, cfg, smoothed=hn)
        vals[j, sel] = [e.mean for e in est]
        ses[j, sel] = [e.std_error for e in est]
    return ValueSurface(dom, vals, "monte-carlo", ses)


@dataclass
class CrosscheckReport:
    pde: ValueSurface
    monte_carlo: ValueSurface
    coefficients: SectionCoefficients
    max_abs: float
    mean_abs: float
    price_scale: float
    tolerance: np.ndarray
    passed: np.ndarray
    theta: float

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))


def section_crosscheck(n: int, dom: SectionDomain, spec: ModelSpec, mc: MollifiedCoefficients,
                       cfg: SimConfig, check_seed: int | None = None, beta_cfg: SimConfig | None = None,
                       rel_floor: float = 0.01, n_se: float = 3.0) -> CrosscheckReport:
    """Solve the section with Monte Carlo boundary data and compare with independent estimates.

    Interior nodes pass when ``|pde - mc| <= max(n_se * combined SE,
    rel_floor * price scale)``; the price scale is the largest absolute
    boundary value.
    """
    hn = SmoothedPayoff(spec.payoff, n)
    coeffs = section_coefficients(n, dom, spec, mc, beta_cfg or cfg, smoothed=hn)
    bsurf = monte_carlo_surface(n, dom, spec, mc, cfg, "boundary", smoothed=hn)
    pde = solve_section(coeffs, bsurf)
    seed = check_seed if check_seed is not None else cfg.seed + 1
    check = monte_carlo_surface(n, dom, spec, mc, cfg.with_(seed=seed), "interior", smoothed=hn)
    sel = ~np.isnan(check.values)
    diff = np.abs(pde.values - check.values)
    combined = np.sqrt(pde.std_error ** 2 + np.nan_to_num(check.std_error) ** 2)
    scale = float(np.nanmax(np.abs(bsurf.values)))
    tol = np.maximum(n_se * combined, rel_floor * scale)
    passed = np.where(sel, diff <= tol, True)
    d = diff[sel]
    return CrosscheckReport(pde, check, coeffs, float(d.max()), float(d.mean()), scale, tol, passed,
                            choose_theta(coeffs))
