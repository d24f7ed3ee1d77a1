"""scikit-learn style wrappers: rows of ``X`` are flattened lifted states.

A row is ``[x0 (m values), history (m * nodes values)]`` as produced by
:meth:`LiftedState.to_row`.  ``fit`` only validates and freezes the
configuration; nothing is learned from data.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .coefficients import ModelSpec, MollifiedCoefficients
from .errors import ConfigError
from .sde_engine import SimConfig
from .value_function import delta, value, value_n


class DelayOptionPricer(RegressorMixin, BaseEstimator):
    """Monte Carlo price (and present-coordinate delta) as a function of the state.

    ``scheme='mild'`` prices the claim itself; ``scheme='yosida'`` returns the
    smoothed approximation at index ``n``.
    """

    def __init__(self, model: ModelSpec | None = None, t: float = 0.0, dt: float = 1.0 / 64,
                 paths: int = 4000, seed: int = 0, scheme: str = "mild", n: int | None = None,
                 max_dim: int = 4, threads: int = 1):
        self.model = model
        self.t = t
        self.dt = dt
        self.paths = paths
        self.seed = seed
        self.scheme = scheme
        self.n = n
        self.max_dim = max_dim
        self.threads = threads

    def fit(self, X=None, y=None):
        if self.model is None:
            raise ConfigError("a ModelSpec is required")
        self.sim_ = SimConfig(dt=self.dt, paths=self.paths, seed=self.seed, scheme=self.scheme, n=self.n,
                              threads=self.threads)
        self.width_ = self.model.m * (1 + self.model.grid.nodes)
        self.mc_ = (MollifiedCoefficients(self.model, self.n, max_dim=self.max_dim)
                    if self.scheme == "yosida" else None)
        if X is not None:
            self._rows(X)
        self.n_features_in_ = self.width_
        return self

    def _rows(self, X):
        X = check_array(X, dtype=float)
        if X.shape[1] != self.width_:
            raise ConfigError(f"expected {self.width_} columns (m * (1 + nodes)), got {X.shape[1]}")
        m, N = self.model.m, self.model.grid.nodes
        return X[:, :m], X[:, m:].reshape(-1, m, N)

    def predict(self, X):
        check_is_fitted(self, "sim_")
        x0, x1 = self._rows(X)
        if self.scheme == "yosida":
            est = value_n(self.n, self.t, (x0, x1), self.model, self.mc_, self.sim_, discount=True)
        else:
            est = value(self.t, (x0, x1), self.model, self.sim_)
        return np.array([e.mean for e in est])

    def predict_delta(self, X):
        """Pathwise derivative along the first present coordinate (splitting scheme)."""
        check_is_fitted(self, "sim_")
        x0, x1 = self._rows(X)
        est = delta(self.t, (x0, x1), self.model, self.sim_.with_(scheme="mild", n=None))
        return np.array([e.mean for e in est])
