"""Numerical checks of the operator and mollifier contracts, shared by the CLI and tests."""

from __future__ import annotations

import numpy as np

from .coefficients import MollifiedCoefficients, ModelSpec, lipschitz_estimate_arrays
from .hilbert_state import HistoryGrid, LiftedState, b_norm_arrays, norm, norm_arrays
from .rng import normals
from .semigroup_ops import semigroup_apply, yosida_semigroup_apply


def smooth_fixture_state(grid: HistoryGrid) -> LiftedState:
    """A smooth path in the domain of the generator (history meets the present)."""
    return LiftedState.from_function(1.0, lambda s: np.cos(1.5 * s) + 0.3 * s, grid)


def semigroup_defects(grid: HistoryGrid, n_list, t: float = 0.5, x: LiftedState | None = None):
    """Rows ``(n, |exp(t A_n) x - S_t x|_H)``."""
    x = x or smooth_fixture_state(grid)
    ref = semigroup_apply(t, x)
    return [(int(n), norm(yosida_semigroup_apply(int(n), t, x) - ref)) for n in n_list]


def contraction_rows(grid: HistoryGrid, x: LiftedState | None = None, shifts=None):
    """Rows ``(node shifts, |S_t x|, |x|)`` for node-multiple ``t``."""
    x = x or smooth_fixture_state(grid)
    shifts = shifts if shifts is not None else range(0, grid.nodes + 2)
    base = norm(x)
    return [(int(k), norm(semigroup_apply(k * grid.spacing, x)), base) for k in shifts]


def probe_states(grid: HistoryGrid, m: int, count: int, seed: int = 0, level: float = 1.0,
                 spread: float = 0.3):
    """Random smooth states ``level + spread * (few modes)`` as arrays (x0s, x1s)."""
    z = normals(seed, "probe", np.arange(count), [0], 4 * m)[:, 0, :].reshape(count, m, 4)
    s = grid.points / grid.window
    x0 = level + spread * z[..., 0]
    x1 = (x0[..., None] + spread * (z[..., 1:2] * s + 0.5 * z[..., 2:3] * np.sin(np.pi * s)
                                    + 0.3 * z[..., 3:4] * np.cos(3 * s)))
    return x0, x1


def probe_pairs(grid: HistoryGrid, m: int, count: int, seed: int = 0, near: float = 0.05):
    """Half far pairs, half pairs at small distance ``near``."""
    x0, x1 = probe_states(grid, m, 2 * count, seed)
    a0, a1, b0, b1 = x0[:count], x1[:count], x0[count:].copy(), x1[count:].copy()
    half = count // 2
    d0, d1 = probe_states(grid, m, count, seed + 1, level=0.0, spread=1.0)
    b0[:half] = a0[:half] + near * d0[:half]
    b1[:half] = a1[:half] + near * d1[:half]
    return a0, a1, b0, b1


def mollifier_rows(spec: ModelSpec, n_list, pairs: int = 400, seed: int = 0, t: float = 0.0,
                   max_dim: int = 4):
    """Rows with empirical weak-norm Lipschitz constants of the mollified drift and
    volatility, their declared bounds, and sampled sup-distances to the originals."""
    a0, a1, b0, b1 = probe_pairs(spec.grid, spec.m, pairs, seed)
    s0, s1 = probe_states(spec.grid, spec.m, pairs, seed + 2)
    g_true = spec.drift_arrays(t, s0, s1)
    sig_true = spec.sigma_arrays(t, s0, s1)
    rows = []
    for n in n_list:
        mc = MollifiedCoefficients(spec, int(n), max_dim=max_dim)
        ga, gb = mc.drift_arrays(t, a0, a1), mc.drift_arrays(t, b0, b1)
        nb = b_norm_arrays(ga[0] - gb[0], ga[1] - gb[1], spec.grid)
        den = b_norm_arrays(a0 - b0, a1 - b1, spec.grid)
        ok = den > 1e-14
        lip_g = float(np.max(nb[ok] / den[ok]))
        lip_s = lipschitz_estimate_arrays(mc.sigma_arrays(t, a0, a1), mc.sigma_arrays(t, b0, b1),
                                          a0, a1, b0, b1, spec.grid)
        gn = mc.drift_arrays(t, s0, s1)
        dist_g = float(np.max(norm_arrays(gn[0] - g_true[0], gn[1] - g_true[1], spec.grid)))
        sn = mc.sigma_arrays(t, s0, s1)
        dist_s = float(np.max(np.linalg.norm((sn - sig_true).reshape(pairs, -1), axis=1)))
        rows.append({"n": int(n), "lip_drift": lip_g, "declared_drift": spec.lipschitz_drift_b,
                     "lip_sigma": lip_s, "declared_sigma": spec.lipschitz_sigma_b,
                     "sup_dist_drift": dist_g, "sup_dist_sigma": dist_s})
    return rows
