"""Model coefficients on the lifted space and their mollified approximants.

The drift is ``G(t, x) = (r x0, 0) + x / 2`` and the volatility is
cylindrical: ``sigma(t, x) = f(t, <x, k_1>, ..., <x, k_c>)`` for a list of
smooth kernels ``k_i`` and an outer Lipschitz map ``f`` from a small registry.
Payoffs are ramps or identities of one linear functional ``<x, k>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import ConfigError, DomainError, NumericalError
from .hilbert_state import (
    B_MU,
    BNormOperator,
    HistoryGrid,
    LiftedState,
    b_norm,
    b_norm_arrays,
    inner_arrays,
    norm,
    norm_arrays,
    resolvent_arrays,
    resolvent_matrix,
    stack,
)

MAX_PROJECTION_DIM = 8


# ---------------------------------------------------------------- kernels

class Kernel:
    """A fixed element of the state space used as a linear functional."""

    def __init__(self, state: LiftedState):
        self.state = state
        self.present_only = not np.any(state.history)

    def pair(self, x0, x1) -> np.ndarray:
        """Batched ``<x, k>`` over leading axes."""
        if self.present_only:
            return np.asarray(x0) @ self.state.present
        return inner_arrays(x0, x1, self.state.present, self.state.history, self.state.grid)


def taper_weights(points: np.ndarray, span: float) -> np.ndarray:
    """Smooth averaging weights on ``[-span, 0]`` vanishing at ``-span``, unit mass."""
    s = np.clip(-points / span, 0.0, 1.0)
    w = np.where(points >= -span, np.cos(0.5 * np.pi * s) ** 2, 0.0)
    return w


def coordinate_kernel(grid: HistoryGrid, m: int, index: int = 0, weight: float = 1.0) -> LiftedState:
    x0 = np.zeros(m)
    x0[index] = weight
    return LiftedState(x0, np.zeros((m, grid.nodes)), grid)


def moving_average_kernel(grid: HistoryGrid, m: int, span: float, index: int = 0,
                          present_weight: float = 0.0) -> LiftedState:
    """``present_weight * x0 + (1 - present_weight) * (smooth average of the past)``."""
    if not 0 < span < grid.window:
        raise ConfigError(f"averaging span must lie in (0, window), got {span}")
    w = taper_weights(grid.points, span)
    w = w / np.sum(w * grid.weights)
    x0 = np.zeros(m)
    x0[index] = present_weight
    x1 = np.zeros((m, grid.nodes))
    x1[index] = (1.0 - present_weight) * w
    return LiftedState(x0, x1, grid)


# ---------------------------------------------------------------- outer maps

class OuterMap:
    """Lipschitz map from kernel pairings ``v`` (..., c) to (..., m, m) matrices."""

    kind = "abstract"

    def __init__(self, constant, slopes):
        self.constant = np.atleast_2d(np.asarray(constant, dtype=float))
        slopes = np.asarray(slopes, dtype=float)
        m = self.constant.shape[0]
        if self.constant.shape != (m, m):
            raise ConfigError("outer map constant must be square")
        if slopes.ndim == 1:
            slopes = slopes.reshape(-1, 1, 1) * np.ones((1, m, m)) if m == 1 else slopes
        if slopes.ndim != 3 or slopes.shape[1:] != (m, m):
            raise ConfigError(f"slopes must have shape (c, {m}, {m})")
        self.slopes = slopes

    @property
    def m(self) -> int:
        return self.constant.shape[0]

    @property
    def n_args(self) -> int:
        return self.slopes.shape[0]

    @property
    def lipschitz(self) -> float:
        # |f(v) - f(w)|_F <= sqrt(sum |L_i|_F^2) |v - w|_2 for all three kinds
        return float(np.sqrt(np.sum(self.slopes ** 2)))

    def _linear(self, v):
        return np.einsum("...c,cij->...ij", v, self.slopes)

    def __call__(self, t, v):
        raise NotImplementedError

    def jacobian(self, t, v):
        """Derivative with shape (..., m, m, c)."""
        raise NotImplementedError


class AffineMap(OuterMap):
    kind = "affine"

    def __call__(self, t, v):
        return self.constant + self._linear(v)

    def jacobian(self, t, v):
        shape = np.shape(v)[:-1] + (self.m, self.m, self.n_args)
        return np.broadcast_to(np.moveaxis(self.slopes, 0, -1), shape)


class ClippedAffineMap(OuterMap):
    kind = "clipped_affine"

    def __init__(self, constant, slopes, lower=-np.inf, upper=np.inf):
        super().__init__(constant, slopes)
        if not lower < upper:
            raise ConfigError("clip bounds must satisfy lower < upper")
        self.lower, self.upper = float(lower), float(upper)

    def __call__(self, t, v):
        return np.clip(self.constant + self._linear(v), self.lower, self.upper)

    def jacobian(self, t, v):
        raw = self.constant + self._linear(v)
        inside = ((raw > self.lower) & (raw < self.upper)).astype(float)
        return inside[..., None] * np.moveaxis(self.slopes, 0, -1)


class TanhMap(OuterMap):
    """``C + cap * tanh(L v / cap)``, saturating at ``C +- cap``."""

    kind = "tanh"

    def __init__(self, constant, slopes, cap=1.0):
        super().__init__(constant, slopes)
        if cap <= 0:
            raise ConfigError("tanh cap must be positive")
        self.cap = float(cap)

    def __call__(self, t, v):
        return self.constant + self.cap * np.tanh(self._linear(v) / self.cap)

    def jacobian(self, t, v):
        sech2 = 1.0 / np.cosh(self._linear(v) / self.cap) ** 2
        return sech2[..., None] * np.moveaxis(self.slopes, 0, -1)


OUTER_MAPS = {"affine": AffineMap, "clipped_affine": ClippedAffineMap, "tanh": TanhMap}


# ---------------------------------------------------------------- payoffs

class Payoff:
    """``psi(<x, k> - strike)`` with ``psi`` a ramp (call, put) or the identity (linear)."""

    KINDS = ("call", "put", "linear")

    def __init__(self, kind: str, kernel: LiftedState, strike: float = 0.0, label: str | None = None):
        if kind not in self.KINDS:
            raise ConfigError(f"unknown payoff kind {kind!r}")
        self.kind = kind
        self.kernel = Kernel(kernel)
        self.strike = float(strike)
        self.label = label or kind
        self._lip = None

    @property
    def grid(self) -> HistoryGrid:
        return self.kernel.state.grid

    @property
    def lipschitz_b(self) -> float:
        """Declared weak-norm Lipschitz constant."""
        if self._lip is None:
            self._lip = BNormOperator(self.grid).dual_norm(self.kernel.state)
        return self._lip

    def arrays(self, x0, x1) -> np.ndarray:
        z = self.kernel.pair(x0, x1) - self.strike
        if self.kind == "call":
            return np.maximum(z, 0.0)
        if self.kind == "put":
            return np.maximum(-z, 0.0)
        return z

    def slope(self, x0, x1) -> np.ndarray:
        """Derivative of ``psi`` at the pairing (right derivative at the kink)."""
        z = self.kernel.pair(x0, x1) - self.strike
        if self.kind == "call":
            return (z > 0).astype(float)
        if self.kind == "put":
            return -(z < 0).astype(float)
        return np.ones_like(z)

    def directional(self, x0, x1, d0, d1) -> np.ndarray:
        """Pathwise derivative along ``(d0, d1)``."""
        return self.slope(x0, x1) * self.kernel.pair(d0, d1)

    def __call__(self, x: LiftedState) -> float:
        return float(self.arrays(x.present, x.history))

    @property
    def is_constant(self) -> bool:
        return False


class ConstantPayoff(Payoff):
    def __init__(self, value: float, grid: HistoryGrid, m: int = 1):
        super().__init__("linear", LiftedState.zeros(grid, m), -float(value), label="constant")

    @property
    def is_constant(self) -> bool:
        return True


def make_payoff(kind: str, grid: HistoryGrid, m: int, strike: float = 1.0, weights=None,
                span: float | None = None, index: int = 0) -> Payoff:
    """Registry: call, put, linear, basket, history_average_strike, constant."""
    if kind in ("call", "put", "linear"):
        return Payoff(kind, coordinate_kernel(grid, m, index), strike)
    if kind == "basket":
        w = np.ones(m) / m if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (m,):
            raise ConfigError("basket weights must have length m")
        return Payoff("call", LiftedState(w, np.zeros((m, grid.nodes)), grid), strike, label="basket")
    if kind == "history_average_strike":
        if span is None:
            span = 0.5 * grid.window
        avg = moving_average_kernel(grid, m, span, index)
        k = coordinate_kernel(grid, m, index) - avg
        return Payoff("call", k, 0.0, label="history_average_strike")
    if kind == "constant":
        return ConstantPayoff(strike, grid, m)
    raise ConfigError(f"unknown payoff {kind!r}")


# ---------------------------------------------------------------- model

@dataclass
class ModelSpec:
    """Rate, horizon, cylindrical volatility and payoff on one grid."""

    rate: float
    horizon: float
    grid: HistoryGrid
    kernels: Sequence[LiftedState]
    outer: OuterMap
    payoff: Payoff
    name: str = "model"
    _kernels: list = field(init=False, repr=False)

    def __post_init__(self):
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        self._kernels = [Kernel(k) for k in self.kernels]
        if len(self._kernels) != self.outer.n_args:
            raise ConfigError(
                f"outer map takes {self.outer.n_args} arguments but {len(self._kernels)} kernels given"
            )
        for k in self.kernels:
            if k.grid != self.grid or k.dim != self.m:
                raise ConfigError("kernel does not match the model grid or dimension")

    @property
    def m(self) -> int:
        return self.outer.m

    @property
    def present_only(self) -> bool:
        """True when neither volatility nor payoff reads the past."""
        return all(k.present_only for k in self._kernels) and self.payoff.kernel.present_only

    def pairings(self, x0, x1) -> np.ndarray:
        if not self._kernels:
            return np.zeros(np.shape(x0)[:-1] + (0,))
        return np.stack([k.pair(x0, x1) for k in self._kernels], axis=-1)

    def sigma_arrays(self, t, x0, x1) -> np.ndarray:
        out = self.outer(t, self.pairings(x0, x1))
        if not np.all(np.isfinite(out)):
            raise NumericalError("volatility produced non-finite values")
        return out

    def drift_arrays(self, t, x0, x1):
        x0 = np.asarray(x0, dtype=float)
        x1 = np.asarray(x1, dtype=float)
        return (self.rate + 0.5) * x0, 0.5 * x1

    @property
    def lipschitz_sigma_b(self) -> float:
        op = BNormOperator(self.grid)
        duals = np.array([op.dual_norm(k) for k in self.kernels])
        return float(self.outer.lipschitz * np.sqrt(np.sum(duals ** 2)))

    @property
    def lipschitz_drift_b(self) -> float:
        e0 = coordinate_kernel(self.grid, 1, 0)
        present_gain = B_MU * b_norm(LiftedState(e0.present, e0.history[:1], self.grid))
        return 0.5 + abs(self.rate) * present_gain

    @property
    def lipschitz_bound(self) -> float:
        return max(self.lipschitz_sigma_b, self.lipschitz_drift_b)


def drift_G(t: float, x: LiftedState, spec: ModelSpec) -> LiftedState:
    d0, d1 = spec.drift_arrays(t, x.present, x.history)
    return LiftedState(d0, d1, x.grid)


def vol_sigma(t: float, x: LiftedState, spec: ModelSpec) -> np.ndarray:
    return spec.sigma_arrays(t, x.present, x.history)


# ---------------------------------------------------------------- mollification

def bump(r):
    """``exp(-1 / (1 - r^2))`` on ``|r| < 1``, zero elsewhere."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def history_mode(points: np.ndarray, window: float, k: int) -> np.ndarray:
    if k == 0:
        return np.ones_like(points)
    return np.cos(k * np.pi * points / window)


def raw_family(grid: HistoryGrid, m: int, size: int) -> list[LiftedState]:
    """Present unit vectors followed by cosine modes of the past, coordinate by coordinate."""
    out = []
    for j in range(m):
        out.append(coordinate_kernel(grid, m, j))
    k = 0
    while len(out) < size:
        for j in range(m):
            x1 = np.zeros((m, grid.nodes))
            x1[j] = history_mode(grid.points, grid.window, k)
            out.append(LiftedState(np.zeros(m), x1, grid))
        k += 1
    return out[:size]


def weak_orthonormal_basis(grid: HistoryGrid, m: int, size: int) -> list[LiftedState]:
    """Gram-Schmidt (two passes) of the raw family in the weak inner product."""
    images = []
    basis = []
    for v in raw_family(grid, m, size):
        y0, y1 = resolvent_arrays(B_MU, v.present, v.history, grid)
        c0, c1 = v.present.copy(), v.history.copy()
        for _ in range(2):
            for (b0, b1), e in zip(images, basis):
                c = float(inner_arrays(y0, y1, b0, b1, grid))
                c0 -= c * e.present
                c1 -= c * e.history
                y0 = y0 - c * b0
                y1 = y1 - c * b1
        nrm = float(norm_arrays(y0, y1, grid))
        if nrm < 1e-12:
            raise NumericalError("raw family is degenerate in the weak norm")
        basis.append(LiftedState(c0 / nrm, c1 / nrm, grid))
        images.append((y0 / nrm, y1 / nrm))
    return basis


@dataclass(frozen=True)
class QuadraturePlan:
    """Nodes ``z_q`` in R^dim and normalized weights for the bump at scale ``1/n``."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str


def quadrature_plan(dim: int, scale: float, order: int = 4, samples: int = 128, seed: int = 7) -> QuadraturePlan:
    """Tensor Gauss-Legendre for dim <= 4, symmetric scrambled Sobol for dim <= 8.

    Weights include the bump and are normalized to sum to one, which plays
    the role of the normalizing constant and makes constants exact.
    """
    if dim < 1:
        raise DomainError("projection dimension must be >= 1")
    if dim > MAX_PROJECTION_DIM:
        raise ConfigError(f"projection dimension {dim} exceeds {MAX_PROJECTION_DIM}")
    if dim <= 4:
        order = max(order, 5) if dim >= 3 else order
        g, w = np.polynomial.legendre.leggauss(order)
        grids = np.meshgrid(*([g] * dim), indexing="ij")
        pts = np.stack([a.ravel() for a in grids], axis=-1)
        wts = np.ones(len(pts))
        for a in np.meshgrid(*([w] * dim), indexing="ij"):
            wts = wts * a.ravel()
        kind = "gauss-legendre"
    else:
        # low-discrepancy points mapped uniformly into the unit ball, then
        # mirrored so the rule is symmetric
        u = qmc.Sobol(dim + 1, scramble=True, seed=seed).random(samples // 2)
        u = np.clip(u, 1e-12, 1 - 1e-12)
        direc = ndtri(u[:, :dim])
        direc /= np.linalg.norm(direc, axis=1, keepdims=True)
        half = direc * u[:, dim:] ** (1.0 / dim)
        pts = np.concatenate([half, -half])
        wts = np.ones(len(pts))
        kind = "sobol"
    wts = wts * bump(np.linalg.norm(pts, axis=1))
    keep = wts > 0
    pts, wts = pts[keep], wts[keep]
    return QuadraturePlan(pts * scale, wts / wts.sum(), kind)


class MollifiedCoefficients:
    """Projected and mollified drift and volatility for one index ``n``.

    The projection dimension is ``min(n, max_dim)``; the mollifier scale is
    ``1/n`` regardless.
    """

    def __init__(self, spec: ModelSpec, n: int, max_dim: int = 4, order: int = 4, samples: int = 128):
        if n < 1:
            raise DomainError("index must be >= 1")
        self.spec = spec
        self.n = int(n)
        self.dim = min(self.n, int(max_dim))
        if self.dim > MAX_PROJECTION_DIM:
            raise ConfigError(f"projection dimension {self.dim} exceeds {MAX_PROJECTION_DIM}")
        self.scale = 1.0 / self.n
        grid = spec.grid
        self.basis = weak_orthonormal_basis(grid, spec.m, self.dim)
        self.basis0 = np.stack([e.present for e in self.basis])          # (dim, m)
        self.basis1 = np.stack([e.history for e in self.basis])          # (dim, m, N)
        img = [resolvent_arrays(B_MU, e.present, e.history, grid) for e in self.basis]
        self._img0 = np.stack([a for a, _ in img])
        self._img1 = np.stack([b for _, b in img])
        # pairings of basis vectors with the volatility kernels: (c, dim)
        self.kernel_matrix = np.array(
            [[k.pair(e.present, e.history) for e in self.basis] for k in spec._kernels]
        ).reshape(len(spec._kernels), self.dim)
        self.plan = quadrature_plan(self.dim, self.scale, order, samples)
        self._zbar = self.plan.weights @ self.plan.nodes
        # stacked-layout operators: coordinates p_k = <x, projector_k> and
        # embedding I_n p = p @ stacked_basis
        rmat = resolvent_matrix(B_MU, grid)
        w = np.concatenate([[1.0], grid.weights])
        gram_op = rmat.T @ (w[:, None] * rmat)
        self.projector = np.einsum("ab,kjb->kja", gram_op, stack(self.basis0, self.basis1))
        self.stacked_basis = stack(self.basis0, self.basis1)
        self.drift_gain = np.concatenate([[spec.rate + 0.5], np.full(grid.nodes, 0.5)])

    def gram(self) -> np.ndarray:
        g = np.empty((self.dim, self.dim))
        for i in range(self.dim):
            for j in range(self.dim):
                g[i, j] = inner_arrays(self._img0[i], self._img1[i], self._img0[j], self._img1[j], self.spec.grid)
        return g

    # projections
    def project(self, x0, x1) -> np.ndarray:
        """``P_n``: weak-inner-product coordinates, shape (..., dim)."""
        y0, y1 = resolvent_arrays(B_MU, x0, x1, self.spec.grid)
        return np.einsum("...j,kj->...k", y0, self._img0) + np.einsum(
            "...jn,kjn,n->...k", y1, self._img1, self.spec.grid.weights
        )

    def embed(self, p):
        """``I_n``: coordinates back to a state."""
        p = np.asarray(p, dtype=float)
        return p @ self.basis0, np.einsum("...k,kjn->...jn", p, self.basis1)

    def project_stacked(self, s) -> np.ndarray:
        return np.einsum("...jn,kjn->...k", s, self.projector)

    def drift_from_coords(self, p) -> np.ndarray:
        """Mollified drift in the stacked layout from projected coordinates."""
        x = np.einsum("...k,kjn->...jn", p - self._zbar, self.stacked_basis)
        return x * self.drift_gain

    def drift_linear_from_coords(self, p) -> np.ndarray:
        return np.einsum("...k,kjn->...jn", p, self.stacked_basis) * self.drift_gain

    # coefficients
    def drift_arrays(self, t, x0, x1):
        # G is affine, so the quadrature average of G(I_n(p - z_q)) is G at the
        # averaged point I_n(p - zbar); zbar vanishes up to rounding
        p = self.project(x0, x1) - self._zbar
        return self.spec.drift_arrays(t, *self.embed(p))

    def drift_linear_arrays(self, t, z0, z1):
        """Derivative of the mollified drift applied to a direction."""
        p = self.project(z0, z1)
        return self.spec.drift_arrays(t, *self.embed(p))

    def _args(self, p):
        # pairings of I_n(p - z_q) with the kernels: (..., Q, c)
        if not hasattr(self, "_node_pairs"):
            self._node_pairs = self.plan.nodes @ self.kernel_matrix.T
        return (p @ self.kernel_matrix.T)[..., None, :] - self._node_pairs

    def sigma_from_coords(self, t, p) -> np.ndarray:
        vals = self.spec.outer(t, self._args(p))
        return np.einsum("q,...qij->...ij", self.plan.weights, vals)

    def sigma_arrays(self, t, x0, x1) -> np.ndarray:
        out = self.sigma_from_coords(t, self.project(x0, x1))
        if not np.all(np.isfinite(out)):
            raise NumericalError("mollified volatility produced non-finite values")
        return out

    def sigma_coord_jacobian(self, t, p, args=None) -> np.ndarray:
        """Derivative in the projected coordinates, shape (..., m, m, dim)."""
        args = self._args(p) if args is None else args
        jac = self.spec.outer.jacobian(t, args)  # (..., Q, m, m, c)
        avg = np.einsum("q,...qijc->...ijc", self.plan.weights, jac)
        return avg @ self.kernel_matrix

    def sigma_with_jacobian(self, t, p):
        args = self._args(p)
        vals = np.einsum("q,...qij->...ij", self.plan.weights, self.spec.outer(t, args))
        return vals, self.sigma_coord_jacobian(t, p, args)

    def sigma_directional(self, t, x0, x1, z0, z1) -> np.ndarray:
        """``D sigma_n(x)[z]`` with shape (..., m, m)."""
        jac = self.sigma_coord_jacobian(t, self.project(x0, x1))
        return np.einsum("...ijk,...k->...ij", jac, self.project(z0, z1))


def mollified_G(n: int, t: float, x: LiftedState, mc: MollifiedCoefficients) -> LiftedState:
    if mc is None:
        raise ConfigError("mollified coefficients are not configured")
    if n != mc.n:
        raise ConfigError(f"coefficients were built for n={mc.n}, not {n}")
    d0, d1 = mc.drift_arrays(t, x.present, x.history)
    return LiftedState(d0, d1, x.grid)


def mollified_sigma(n: int, t: float, x: LiftedState, mc: MollifiedCoefficients) -> np.ndarray:
    if mc is None:
        raise ConfigError("mollified coefficients are not configured")
    if n != mc.n:
        raise ConfigError(f"coefficients were built for n={mc.n}, not {n}")
    return mc.sigma_arrays(t, x.present, x.history)


# ---------------------------------------------------------------- Lipschitz probe

def _distance(a, b, kind: str) -> float:
    if isinstance(a, LiftedState):
        d = a - b
        return b_norm(d) if kind == "B" else norm(d)
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def lipschitz_estimate(fn: Callable, pairs, norm_kind: str = "B", tol: float = 1e-14) -> float:
    """Largest ``|fn(x) - fn(y)| / |x - y|`` over the pairs.

    Inputs and state-valued outputs are measured in ``norm_kind`` ('H' or
    'B'); array outputs use the Frobenius norm.
    """
    if norm_kind not in ("H", "B"):
        raise DomainError("norm must be 'H' or 'B'")
    pairs = list(pairs)
    if len(pairs) < 1:
        raise DomainError("need at least one pair")
    best = None
    for x, y in pairs:
        den = _distance(x, y, norm_kind)
        if den <= tol:
            continue
        ratio = _distance(fn(x), fn(y), norm_kind) / den
        best = ratio if best is None else max(best, ratio)
    if best is None:
        raise DomainError("all pairs coincide")
    return float(best)


def lipschitz_estimate_arrays(values_x, values_y, x0, x1, y0, y1, grid, norm_kind="B") -> float:
    """Vectorised counterpart of :func:`lipschitz_estimate` for array outputs."""
    d0, d1 = np.asarray(x0) - y0, np.asarray(x1) - y1
    den = b_norm_arrays(d0, d1, grid) if norm_kind == "B" else norm_arrays(d0, d1, grid)
    num = np.linalg.norm((np.asarray(values_x) - values_y).reshape(len(den), -1), axis=1)
    ok = den > 1e-14
    if not np.any(ok):
        raise DomainError("all pairs coincide")
    return float(np.max(num[ok] / den[ok]))
