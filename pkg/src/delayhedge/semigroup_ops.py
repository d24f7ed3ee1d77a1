"""Killed shift semigroup, Yosida approximations and their exponentials."""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, NumericalError
from .hilbert_state import (
    KILLING_RATE,
    HistoryGrid,
    LiftedState,
    generator_arrays,
    norm,
    norm_arrays,
    resolvent_arrays,
    resolvent_matrix,
)

_NODE_TOL = 1e-9


def _shift_plan(t: float, grid: HistoryGrid):
    """Where each node reads from after translating the past by ``t``.

    Returns (left index, weight of right neighbour, mask reading the past,
    mask on the seam node at exactly ``-t``).  Nodes right of the seam take the
    present value.  The seam node takes the mean of both sides, the
    trapezoid-consistent value at a jump, which keeps node-multiple shifts
    non-expansive in the discrete norm.
    """
    pos = grid.points + t
    h = grid.spacing
    seam = np.abs(pos) <= _NODE_TOL * max(1.0, h)
    past = (pos < 0) & ~seam
    u = np.clip((pos - grid.points[0]) / h, 0.0, grid.nodes - 1.0)
    left = np.minimum(np.floor(u + _NODE_TOL).astype(int), grid.nodes - 2)
    frac = np.where(past, u - left, 0.0)
    frac[np.abs(frac) < _NODE_TOL] = 0.0
    return left, frac, past, seam


def shift_arrays(t: float, x0, x1, grid: HistoryGrid):
    """Batched translation of the past with the present filling ``[-t, 0]``.

    No killing factor is applied here.
    """
    if t < 0:
        raise DomainError(f"shift time must be nonnegative, got {t}")
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if t == 0:
        return x0.copy(), x1.copy()
    left, frac, past, seam = _shift_plan(t, grid)
    out = np.broadcast_to(x0[..., None], x1.shape).copy()
    idx = np.nonzero(past)[0]
    if idx.size:
        lo = left[idx]
        f = frac[idx]
        vals = x1[..., lo] * (1.0 - f)
        nz = f > 0
        if np.any(nz):
            vals[..., nz] += x1[..., lo[nz] + 1] * f[nz]
        out[..., idx] = vals
    sidx = np.nonzero(seam)[0]
    if sidx.size:
        out[..., sidx] = 0.5 * (x1[..., -1:] + x0[..., None])
    return x0.copy(), out


def semigroup_arrays(t: float, x0, x1, grid: HistoryGrid):
    y0, y1 = shift_arrays(t, x0, x1, grid)
    k = math.exp(-KILLING_RATE * t)
    return k * y0, k * y1


def is_node_multiple(t: float, grid: HistoryGrid) -> bool:
    r = t / grid.spacing
    return abs(r - round(r)) <= _NODE_TOL * max(1.0, r)


def semigroup_apply(t: float, x: LiftedState) -> LiftedState:
    """Contraction ``S_t = exp(-t/2) * shift_t``.

    Node-multiple ``t`` is an exact index shift; other values interpolate
    linearly between nodes.
    """
    y0, y1 = semigroup_arrays(t, x.present, x.history, x.grid)
    return LiftedState(y0, y1, x.grid)


def yosida_arrays(n: int, x0, x1, grid: HistoryGrid):
    """Batched ``A_n x = n^2 (n - A)^{-1} x - n x``."""
    if n < 1:
        raise DomainError(f"Yosida index must be >= 1, got {n}")
    r0, r1 = resolvent_arrays(n + KILLING_RATE, x0, x1, grid)
    n2 = float(n) * n
    return n2 * r0 - n * np.asarray(x0), n2 * r1 - n * np.asarray(x1)


def yosida_matrix(n: int, grid: HistoryGrid) -> np.ndarray:
    """``A_n`` on one coordinate in the stacked layout ``[x0, x1 nodes]``."""
    if n < 1:
        raise DomainError(f"Yosida index must be >= 1, got {n}")
    mat = float(n) * n * resolvent_matrix(n + KILLING_RATE, grid)
    mat[np.diag_indices_from(mat)] -= n
    return mat


def yosida_apply(n: int, x: LiftedState) -> LiftedState:
    y0, y1 = yosida_arrays(n, x.present, x.history, x.grid)
    return LiftedState(y0, y1, x.grid)


def generator_of_contraction(x: LiftedState) -> LiftedState:
    """``A x = (generator - 1/2) x`` by finite differences (for smooth x in the domain)."""
    d0, d1 = generator_arrays(x.present, x.history, x.grid)
    return LiftedState(d0 - KILLING_RATE * x.present, d1 - KILLING_RATE * x.history, x.grid)


def yosida_substeps(n: int, t: float, steps: int = 1) -> int:
    """Substep count keeping each step at or below ``1/(2n)``."""
    return max(int(steps), int(math.ceil(2.0 * n * t - 1e-12)), 1)


def yosida_flow_arrays(n: int, t: float, x0, x1, grid: HistoryGrid, steps: int = 1, tol: float = 1e-6):
    """Batched ``exp(t A_n) x`` by classical RK4 substeps of size <= 1/(2n)."""
    if steps < 1:
        raise DomainError("steps must be >= 1")
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    y0 = np.array(x0, dtype=float)
    y1 = np.array(x1, dtype=float)
    if t == 0:
        return y0, y1
    k = yosida_substeps(n, t, steps)
    h = t / k
    start = norm_arrays(y0, y1, grid)

    def f(a0, a1):
        return yosida_arrays(n, a0, a1, grid)

    for _ in range(k):
        k10, k11 = f(y0, y1)
        k20, k21 = f(y0 + 0.5 * h * k10, y1 + 0.5 * h * k11)
        k30, k31 = f(y0 + 0.5 * h * k20, y1 + 0.5 * h * k21)
        k40, k41 = f(y0 + h * k30, y1 + h * k31)
        y0 = y0 + h / 6.0 * (k10 + 2 * k20 + 2 * k30 + k40)
        y1 = y1 + h / 6.0 * (k11 + 2 * k21 + 2 * k31 + k41)
    end = norm_arrays(y0, y1, grid)
    if not np.all(np.isfinite(end)) or np.any(end > start * (1.0 + tol) + tol):
        raise NumericalError(f"Yosida flow grew the norm (n={n}, t={t})")
    return y0, y1


def yosida_semigroup_apply(n: int, t: float, x: LiftedState, steps: int = 1) -> LiftedState:
    y0, y1 = yosida_flow_arrays(n, t, x.present, x.history, x.grid, steps)
    return LiftedState(y0, y1, x.grid)


def _shifted_generator(x: LiftedState) -> LiftedState:
    # R = A - 1 evaluated by finite differences
    a = generator_of_contraction(x)
    return a - x


def commutation_defect(n: int, t: float, x: LiftedState, steps: int = 1) -> float:
    """``|exp(t A_n) R x - R exp(t A_n) x|`` with ``R = A - 1``; a diagnostic."""
    left = yosida_semigroup_apply(n, t, _shifted_generator(x), steps)
    right = _shifted_generator(yosida_semigroup_apply(n, t, x, steps))
    return norm(left - right)


class ShiftSemigroup:
    """Operator wrapper around :func:`semigroup_apply` for a fixed grid."""

    killing = KILLING_RATE

    def __init__(self, grid: HistoryGrid):
        self.grid = grid

    def __call__(self, t: float, x: LiftedState) -> LiftedState:
        return semigroup_apply(t, x)

    def exact_on(self, t: float) -> bool:
        return is_node_multiple(t, self.grid)


class YosidaOperator:
    """Bounded approximation ``A_n`` of the generator and its exponential."""

    def __init__(self, n: int, grid: HistoryGrid):
        if n < 1:
            raise DomainError(f"Yosida index must be >= 1, got {n}")
        self.n = int(n)
        self.grid = grid

    @property
    def bound(self) -> float:
        return 2.0 * self.n

    def __call__(self, x: LiftedState) -> LiftedState:
        return yosida_apply(self.n, x)

    def flow(self, t: float, x: LiftedState, steps: int = 1) -> LiftedState:
        return yosida_semigroup_apply(self.n, t, x, steps)
