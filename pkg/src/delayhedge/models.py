"""Ready-made model fixtures used by the CLI, the tests and the acceptance suite."""

from __future__ import annotations

from .coefficients import (
    AffineMap,
    ClippedAffineMap,
    ModelSpec,
    coordinate_kernel,
    make_payoff,
    moving_average_kernel,
)
from .hilbert_state import HistoryGrid, LiftedState


def black_scholes_model(vol: float = 0.2, rate: float = 0.02, horizon: float = 1.0, strike: float = 1.0,
                        kind: str = "call", grid: HistoryGrid | None = None) -> ModelSpec:
    """Volatility ``vol * x0``: no dependence on the past, so prices are Black-Scholes."""
    grid = grid or HistoryGrid(0.25, 9)
    return ModelSpec(rate, horizon, grid, [coordinate_kernel(grid, 1)], AffineMap([[0.0]], [vol]),
                     make_payoff(kind, grid, 1, strike), name="black-scholes")


def moving_average_model(slope: float = 0.25, lower: float = 0.05, upper: float = 0.6,
                         rate: float = 0.02, horizon: float = 1.0, strike: float = 1.0,
                         span: float = 0.25, present_weight: float = 0.5, kind: str = "call",
                         grid: HistoryGrid | None = None) -> ModelSpec:
    """Volatility ``clip(slope * (w x0 + (1 - w) * average of the recent past))``."""
    grid = grid or HistoryGrid(0.5, 33)
    k = moving_average_kernel(grid, 1, span, present_weight=present_weight)
    return ModelSpec(rate, horizon, grid, [k], ClippedAffineMap([[0.0]], [slope], lower, upper),
                     make_payoff(kind, grid, 1, strike), name="moving-average")


def flat_history_state(level: float, grid: HistoryGrid, m: int = 1) -> LiftedState:
    return LiftedState.constant_path([level] * m, grid)


MODELS = {"black_scholes": black_scholes_model, "moving_average": moving_average_model}
