"""Points of R^m x L^2 on a truncated history window.

A state is a present value ``x0`` in R^m together with a sampled past
trajectory ``x1`` on a uniform grid over ``[-window, 0]``.  Integrals over the
past use trapezoidal weights.  Most routines come in two flavours: a
``LiftedState`` API for single points and an ``*_arrays`` API working on
batches ``x0.shape == (..., m)``, ``x1.shape == (..., m, nodes)`` that the
simulation kernels use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.signal import lfilter

from .errors import DomainError, GridMismatchError, NumericalError

# killing rate of the contraction semigroup and the resolvent point used by
# the weak norm: (A - 1) with A = generator - 1/2 is generator - 3/2
KILLING_RATE = 0.5
B_SHIFT = 1.0
B_MU = B_SHIFT + KILLING_RATE


@dataclass(frozen=True)
class HistoryGrid:
    """Uniform grid on [-window, 0] with trapezoidal weights."""

    window: float = 2.0
    nodes: int = 201

    def __post_init__(self):
        if not np.isfinite(self.window) or self.window <= 0:
            raise DomainError(f"window must be positive, got {self.window}")
        if int(self.nodes) != self.nodes or self.nodes < 2:
            raise DomainError(f"nodes must be an integer >= 2, got {self.nodes}")
        object.__setattr__(self, "nodes", int(self.nodes))
        object.__setattr__(self, "window", float(self.window))

    @property
    def spacing(self) -> float:
        return self.window / (self.nodes - 1)

    @cached_property
    def points(self) -> np.ndarray:
        pts = np.linspace(-self.window, 0.0, self.nodes)
        pts.setflags(write=False)
        return pts

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.full(self.nodes, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        w.setflags(write=False)
        return w

    def refine(self, factor: int) -> "HistoryGrid":
        """Grid with ``factor`` sub-intervals per interval; old nodes are kept."""
        factor = int(factor)
        if factor < 1:
            raise DomainError("refinement factor must be >= 1")
        return HistoryGrid(self.window, (self.nodes - 1) * factor + 1)

    def steps_for(self, dt: float, tol: float = 1e-9) -> int:
        """Number of time steps of size ``dt`` per grid interval.

        Raises if ``dt`` does not divide the spacing.
        """
        ratio = self.spacing / dt
        k = int(round(ratio))
        if k < 1 or abs(ratio - k) > tol * max(1.0, ratio):
            raise DomainError(
                f"time step {dt} does not divide the history spacing {self.spacing}"
            )
        return k


@dataclass(frozen=True, eq=False)
class LiftedState:
    """Immutable point ``(present, history)`` on a ``HistoryGrid``."""

    present: np.ndarray
    history: np.ndarray
    grid: HistoryGrid = field(default_factory=HistoryGrid)

    def __post_init__(self):
        x0 = np.array(self.present, dtype=float).reshape(-1)
        x1 = np.array(self.history, dtype=float)
        if x1.ndim == 1:
            x1 = x1.reshape(1, -1)
        if x1.shape != (x0.size, self.grid.nodes):
            raise GridMismatchError(
                f"history shape {x1.shape} does not match (m={x0.size}, nodes={self.grid.nodes})"
            )
        if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(x1))):
            raise NumericalError("state has non-finite entries")
        x0.setflags(write=False)
        x1.setflags(write=False)
        object.__setattr__(self, "present", x0)
        object.__setattr__(self, "history", x1)

    # construction helpers
    @classmethod
    def zeros(cls, grid: HistoryGrid, m: int = 1) -> "LiftedState":
        return cls(np.zeros(m), np.zeros((m, grid.nodes)), grid)

    @classmethod
    def from_function(cls, present, func, grid: HistoryGrid) -> "LiftedState":
        """History sampled from ``func(points)``; may return shape (nodes,) or (m, nodes)."""
        x0 = np.atleast_1d(np.asarray(present, dtype=float))
        vals = np.asarray(func(grid.points), dtype=float)
        vals = np.broadcast_to(vals, (x0.size, grid.nodes))
        return cls(x0, vals, grid)

    @classmethod
    def constant_path(cls, value, grid: HistoryGrid) -> "LiftedState":
        """Present ``value`` and a flat past equal to it (a point of the domain)."""
        x0 = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(x0, np.repeat(x0[:, None], grid.nodes, axis=1), grid)

    @classmethod
    def from_row(cls, row, grid: HistoryGrid, m: int) -> "LiftedState":
        row = np.asarray(row, dtype=float).reshape(-1)
        if row.size != m * (1 + grid.nodes):
            raise GridMismatchError(f"row of length {row.size} does not fit m={m}, nodes={grid.nodes}")
        return cls(row[:m], row[m:].reshape(m, grid.nodes), grid)

    def to_row(self) -> np.ndarray:
        """Flat layout ``[x0..., x1 samples...]`` used by CSV exports."""
        return np.concatenate([self.present, self.history.ravel()])

    @property
    def dim(self) -> int:
        return self.present.size

    # vector space structure
    def _check(self, other: "LiftedState"):
        if not isinstance(other, LiftedState):
            return NotImplemented
        if other.grid != self.grid or other.dim != self.dim:
            raise GridMismatchError("states live on different grids")
        return None

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return LiftedState(self.present + other.present, self.history + other.history, self.grid)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return LiftedState(self.present - other.present, self.history - other.history, self.grid)

    def __mul__(self, scalar):
        return LiftedState(scalar * self.present, scalar * self.history, self.grid)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def allclose(self, other: "LiftedState", atol=1e-12, rtol=0.0) -> bool:
        self._check(other)
        return bool(
            np.allclose(self.present, other.present, atol=atol, rtol=rtol)
            and np.allclose(self.history, other.history, atol=atol, rtol=rtol)
        )


# ---------------------------------------------------------------- batched API

def inner_arrays(a0, a1, b0, b1, grid: HistoryGrid) -> np.ndarray:
    """Batched inner product; reduces the trailing (m,) and (m, nodes) axes."""
    hist = np.einsum("...jn,...jn,n->...", a1, b1, grid.weights)
    return np.sum(a0 * b0, axis=-1) + hist


def norm_arrays(x0, x1, grid: HistoryGrid) -> np.ndarray:
    return np.sqrt(np.maximum(inner_arrays(x0, x1, x0, x1, grid), 0.0))


def _resolvent_weights(mu: float, h: float):
    q = mu * h
    decay = np.exp(-q)
    mass = -np.expm1(-q) / q  # (1/h) int_0^h e^{-mu tau} dtau
    first = (-np.expm1(-q) - q * decay) / (q * q)  # (1/h^2) int_0^h tau e^{-mu tau} dtau
    return decay, h * (mass - first), h * first


def resolvent_arrays(mu: float, x0, x1, grid: HistoryGrid):
    """Batched ``(mu - generator)^{-1}``.

    The history ODE ``y' = mu y - x1`` with ``y(0) = x0 / mu`` is integrated
    from the present backwards.  Between nodes ``x1`` is linear and the
    exponential kernel is integrated exactly, so large ``mu`` causes no
    stiffness error.
    """
    if not np.isfinite(mu) or mu <= 0:
        raise DomainError(f"resolvent parameter must be positive, got {mu}")
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    y0 = x0 / mu
    decay, w_left, w_right = _resolvent_weights(mu, grid.spacing)
    forcing = w_left * x1[..., :-1] + w_right * x1[..., 1:]
    # run the recursion y_i = decay * y_{i+1} + forcing_i from the right end
    seq = np.concatenate([y0[..., None], forcing[..., ::-1]], axis=-1)
    y1 = lfilter([1.0], [1.0, -decay], seq, axis=-1)[..., ::-1]
    return y0, np.ascontiguousarray(y1)


def resolvent_matrix(mu: float, grid: HistoryGrid) -> np.ndarray:
    """Matrix of the resolvent on one coordinate in the stacked layout ``[x0, x1 nodes]``."""
    size = grid.nodes + 1
    eye = np.eye(size)
    y0, y1 = resolvent_arrays(mu, eye[:, :1], eye[:, None, 1:], grid)
    return np.concatenate([y0, y1[:, 0, :]], axis=1).T


def stack(x0, x1) -> np.ndarray:
    """``(..., m)`` and ``(..., m, N)`` to the stacked layout ``(..., m, N + 1)``."""
    x0 = np.asarray(x0, dtype=float)
    return np.concatenate([x0[..., None], np.asarray(x1, dtype=float)], axis=-1)


def generator_arrays(x0, x1, grid: HistoryGrid):
    """Finite-difference shift generator: ``(0, d/ds x1)``."""
    x1 = np.asarray(x1, dtype=float)
    deriv = np.gradient(x1, grid.spacing, axis=-1, edge_order=2)
    return np.zeros_like(np.asarray(x0, dtype=float)), deriv


# ---------------------------------------------------------------- state API

def _same_grid(a: LiftedState, b: LiftedState):
    if a.grid != b.grid or a.dim != b.dim:
        raise GridMismatchError("states live on different grids")


def inner_product(a: LiftedState, b: LiftedState) -> float:
    _same_grid(a, b)
    return float(inner_arrays(a.present, a.history, b.present, b.history, a.grid))


def norm(x: LiftedState) -> float:
    return float(norm_arrays(x.present, x.history, x.grid))


def resolvent_apply(mu: float, x: LiftedState) -> LiftedState:
    y0, y1 = resolvent_arrays(mu, x.present, x.history, x.grid)
    return LiftedState(y0, y1, x.grid)


def generator_apply(x: LiftedState) -> LiftedState:
    d0, d1 = generator_arrays(x.present, x.history, x.grid)
    return LiftedState(d0, d1, x.grid)


def b_norm(x: LiftedState) -> float:
    """Weak norm ``|(A - 1)^{-1} x|``."""
    return norm(resolvent_apply(B_MU, x))


def b_inner(x: LiftedState, y: LiftedState) -> float:
    _same_grid(x, y)
    return inner_product(resolvent_apply(B_MU, x), resolvent_apply(B_MU, y))


def b_norm_arrays(x0, x1, grid: HistoryGrid) -> np.ndarray:
    y0, y1 = resolvent_arrays(B_MU, x0, x1, grid)
    return norm_arrays(y0, y1, grid)


class BNormOperator:
    """Weak-norm machinery for one grid.

    The square root of the weak-norm operator is never formed; weak inner
    products go through the resolvent.
    """

    shift = B_SHIFT
    killing = KILLING_RATE

    def __init__(self, grid: HistoryGrid):
        self.grid = grid

    @property
    def mu(self) -> float:
        return self.shift + self.killing

    def apply(self, x: LiftedState) -> LiftedState:
        return resolvent_apply(self.mu, x)

    def apply_generator_shift(self, y: LiftedState) -> LiftedState:
        """``(mu - generator) y`` by finite differences."""
        d = generator_apply(y)
        return LiftedState(self.mu * y.present - d.present, self.mu * y.history - d.history, y.grid)

    def norm(self, x: LiftedState) -> float:
        return b_norm(x)

    def inner(self, x: LiftedState, y: LiftedState) -> float:
        return b_inner(x, y)

    def adjoint_apply(self, kernel: LiftedState) -> LiftedState:
        """Adjoint of ``A - 1`` on a kernel whose past vanishes at the window edge."""
        d1 = np.gradient(kernel.history, self.grid.spacing, axis=-1, edge_order=2)
        z0 = kernel.history[:, -1] - self.mu * kernel.present
        return LiftedState(z0, -d1 - self.mu * kernel.history, self.grid)

    def dual_norm(self, kernel: LiftedState, edge_tol: float = 1e-8) -> float:
        """Norm of ``x -> <x, kernel>`` against the weak norm of x.

        Equals ``|(A - 1)^* kernel|``; infinite when the kernel's past does
        not vanish at ``-window`` (the truncation then acts like a point mass).
        """
        scale = max(1.0, float(np.max(np.abs(kernel.history), initial=0.0)))
        if np.any(np.abs(kernel.history[:, 0]) > edge_tol * scale):
            return float("inf")
        return norm(self.adjoint_apply(kernel))
