import numpy as np
import pytest

from delayhedge.hilbert_state import HistoryGrid, LiftedState
from delayhedge.models import black_scholes_model, moving_average_model


@pytest.fixture
def grid():
    return HistoryGrid(2.0, 81)


@pytest.fixture
def smooth_state(grid):
    return LiftedState.from_function(1.0, lambda s: np.cos(1.5 * s) + 0.3 * s, grid)


@pytest.fixture(scope="session")
def bs_spec():
    return black_scholes_model()


@pytest.fixture(scope="session")
def ma_spec():
    return moving_average_model()
