"""Path simulation for the lifted delay SDE.

Two schemes are provided.  The splitting scheme applies the killed shift
exactly: the past is carried on a grid of spacing ``dt`` inside a ring buffer,
so one step costs O(paths) plus kernel pairings.  The Yosida scheme is plain
Euler-Maruyama with the bounded generator approximation and mollified
coefficients on the model grid.

Noise comes from :mod:`delayhedge.rng` keyed by (seed, path, absolute step),
which couples schemes, start times and bumped initial states through common
random numbers.  Paths are processed in fixed-size chunks so results do not
depend on the thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .coefficients import MollifiedCoefficients, ModelSpec
from .errors import ConfigError, DomainError, NumericalError
from .hilbert_state import KILLING_RATE, HistoryGrid, LiftedState, b_norm_arrays, stack
from .semigroup_ops import yosida_matrix

_TIME_TOL = 1e-9


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0 / 64
    paths: int = 1000
    seed: int = 0
    scheme: str = "mild"
    n: int | None = None
    antithetic: bool = False
    stream: str = "pricing"
    chunk: int = 4096
    threads: int = 1

    def __post_init__(self):
        if self.paths < 1:
            raise ConfigError("path count must be >= 1")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("time step must be positive")
        if self.scheme not in ("mild", "yosida"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "yosida" and (self.n is None or self.n < 1):
            raise ConfigError("the Yosida scheme needs an index n >= 1")
        if self.antithetic and self.paths % 2:
            raise ConfigError("antithetic sampling needs an even path count")
        if self.chunk < 1 or self.threads < 1:
            raise ConfigError("chunk and thread counts must be >= 1")

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)


@dataclass
class PathEnsemble:
    """Simulated lifted paths; histories are reported on the model grid.

    For a batch of initial states rows are ordered state-major: row
    ``b * paths + p`` is path ``p`` started from state ``b``.
    """

    times: np.ndarray
    scheme: str
    grid: HistoryGrid
    path_ids: np.ndarray
    terminal_present: np.ndarray
    terminal_history: np.ndarray
    present: np.ndarray | None = None
    record_steps: np.ndarray | None = None
    states_present: np.ndarray | None = None
    states_history: np.ndarray | None = None
    direction: LiftedState | None = None

    @property
    def paths(self) -> int:
        return len(self.path_ids)

    def terminal_state(self, path: int) -> LiftedState:
        return LiftedState(self.terminal_present[path], self.terminal_history[path], self.grid)

    def state(self, path: int, step: int) -> LiftedState:
        if self.states_present is None:
            raise ConfigError("states were not recorded")
        j = int(np.searchsorted(self.record_steps, step))
        if j >= len(self.record_steps) or self.record_steps[j] != step:
            raise DomainError(f"step {step} was not recorded")
        return LiftedState(self.states_present[path, j], self.states_history[path, j], self.grid)


FirstVariationEnsemble = PathEnsemble


def time_steps(t: float, horizon: float, dt: float) -> tuple[int, int]:
    """Absolute index of the first step and the number of steps to the horizon."""
    if t > horizon + _TIME_TOL:
        raise DomainError(f"start time {t} is after the horizon {horizon}")
    k0 = t / dt
    steps = (horizon - t) / dt
    if abs(k0 - round(k0)) > 1e-7 * max(1, k0) or abs(steps - round(steps)) > 1e-7 * max(1, steps):
        raise DomainError(f"times {t} and {horizon} are not multiples of dt={dt}")
    return int(round(k0)), int(round(steps))


def brownian_increments(cfg: SimConfig, path_ids, k0: int, steps: int, m: int, substeps: int = 1):
    """Increments with shape (paths, steps, substeps, m).

    Substeps refine each step's increment by a Brownian bridge, so the sum over
    substeps equals the single-step increment drawn for the same key.
    """
    path_ids = np.asarray(path_ids)
    if cfg.antithetic:
        keys, sign = path_ids // 2, np.where(path_ids % 2 == 0, 1.0, -1.0)
    else:
        keys, sign = path_ids, np.ones(len(path_ids))
    step_ids = np.arange(k0, k0 + steps)
    z = rng.normals(cfg.seed, cfg.stream, keys, step_ids, m) * sign[:, None, None]
    total = math.sqrt(cfg.dt) * z
    if substeps == 1:
        return total[:, :, None, :]
    out = np.empty(total.shape[:2] + (substeps, m))
    h = cfg.dt / substeps
    remaining = total.copy()
    for j in range(substeps - 1):
        tau = cfg.dt - j * h
        xi = rng.normals(cfg.seed, cfg.stream, keys, step_ids, m, extra=j + 1) * sign[:, None, None]
        inc = remaining * (h / tau) + math.sqrt(h * (tau - h) / tau) * xi
        out[:, :, j] = inc
        remaining = remaining - inc
    out[:, :, -1] = remaining
    return out


def _chunks(paths: int, chunk: int):
    return [np.arange(s, min(s + chunk, paths)) for s in range(0, paths, chunk)]


def run_chunked(fn, paths: int, chunk: int, threads: int):
    parts = _chunks(paths, chunk)
    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, parts))
    return [fn(p) for p in parts]


def _concat(results, key):
    vals = [r[key] for r in results]
    if vals[0] is None:
        return None
    return np.concatenate(vals, axis=0)


# ---------------------------------------------------------------- splitting scheme

class _Ring:
    """Past values of a batch of paths on the fine grid, stored as a ring buffer.

    ``logical[i] = scale * buf[(head + i) % N]``.  One shift by a node moves
    ``head`` forward and multiplies the common scale; only two slots are
    rewritten per step.
    """

    def __init__(self, x0, x1_fine):
        self.buf = np.array(x1_fine, dtype=float)
        self.N = self.buf.shape[-1]
        self.head = 0
        self.scale = 1.0
        self.x0 = np.array(x0, dtype=float)

    def logical(self):
        return self.scale * np.roll(self.buf, -self.head, axis=-1)

    def pair(self, weighted_kernel):
        """``sum_i w_i k_i x1_i`` over the last two axes for a weighted kernel (m, N)."""
        rolled = np.roll(weighted_kernel, self.head, axis=-1)
        return self.scale * np.einsum("pjn,jn->p", self.buf, rolled)

    def advance(self, factor: float, new_x0):
        """Shift by one node: past *= factor, seam gets the mean, front gets new_x0."""
        prev_front = self.scale * self.buf[..., (self.head + self.N - 1) % self.N]
        self.head = (self.head + 1) % self.N
        self.scale *= factor
        seam = 0.5 * (factor * prev_front + new_x0)
        self.buf[..., (self.head + self.N - 2) % self.N] = seam / self.scale
        self.buf[..., (self.head + self.N - 1) % self.N] = new_x0 / self.scale
        self.x0 = new_x0
        if self.scale < 1e-100 or self.scale > 1e100:
            self.buf *= self.scale
            self.scale = 1.0


def _fine_setup(spec: ModelSpec, dt: float):
    k = spec.grid.steps_for(dt)
    fine = spec.grid.refine(k)
    coarse_idx = np.arange(spec.grid.nodes) * k
    kernels = []
    for kern in spec._kernels:
        st = kern.state
        if kern.present_only:
            kernels.append((st.present, None))
        else:
            h1 = np.stack([np.interp(fine.points, spec.grid.points, row) for row in st.history])
            kernels.append((st.present, h1 * fine.weights))
    return fine, coarse_idx, kernels


def _pairings(ring: _Ring, kernels) -> np.ndarray:
    cols = []
    for k0, kw in kernels:
        v = ring.x0 @ k0
        if kw is not None:
            v = v + ring.pair(kw)
        cols.append(v)
    if not cols:
        return np.zeros((ring.x0.shape[0], 0))
    return np.stack(cols, axis=-1)


def _to_fine(x1, coarse: HistoryGrid, fine: HistoryGrid):
    flat = x1.reshape(-1, coarse.nodes)
    out = np.stack([np.interp(fine.points, coarse.points, row) for row in flat])
    return out.reshape(x1.shape[:-1] + (fine.nodes,))


def _mild_chunk(rows, t, init, spec, cfg, k0, steps, fine, coarse_idx, kernels,
                tangent, record_present, record_steps):
    m = spec.m
    ids, sidx = rows % cfg.paths, rows // cfg.paths
    ring = _Ring(init[0][sidx], init[2][sidx])
    tring = None
    if tangent is not None:
        tring = _Ring(tangent[0][sidx], tangent[2][sidx])
    dW = brownian_increments(cfg, ids, k0, steps, m)[:, :, 0, :]
    P = len(rows)
    dt = cfg.dt
    kill = math.exp(-KILLING_RATE * dt)
    factor = kill * (1.0 + 0.5 * dt)
    gain = 1.0 + dt * (spec.rate + 0.5)
    present = np.empty((P, steps + 1, m)) if record_present else None
    if present is not None:
        present[:, 0] = ring.x0
    rec = set(int(s) for s in record_steps)
    sp, sh = [], []

    def snap():
        sp.append(ring.x0.copy())
        sh.append(ring.logical()[..., coarse_idx])

    if 0 in rec:
        snap()
    for k in range(steps):
        tk = t + k * dt
        v = _pairings(ring, kernels)
        sig = spec.outer(tk, v)
        noise = np.einsum("pij,pj->pi", sig, dW[:, k])
        new_x0 = kill * (gain * ring.x0 + noise)
        if tring is not None:
            jac = spec.outer.jacobian(tk, v)
            dz = _pairings(tring, kernels)
            dsig = np.einsum("pijc,pc->pij", jac, dz)
            new_z0 = kill * (gain * tring.x0 + np.einsum("pij,pj->pi", dsig, dW[:, k]))
            tring.advance(factor, new_z0)
        ring.advance(factor, new_x0)
        if not np.all(np.isfinite(new_x0)):
            raise NumericalError(f"non-finite state at step {k0 + k + 1}", step=k0 + k + 1)
        if present is not None:
            present[:, k + 1] = new_x0
        if k + 1 in rec:
            snap()
    out = {
        "x0": ring.x0.copy(),
        "x1": ring.logical()[..., coarse_idx],
        "present": present,
        "sp": np.stack(sp, axis=1) if sp else None,
        "sh": np.stack(sh, axis=1) if sh else None,
        "z0": None,
        "z1": None,
    }
    if tring is not None:
        out["z0"] = tring.x0.copy()
        out["z1"] = tring.logical()[..., coarse_idx]
    return out


def _assemble(results, t, steps, dt, scheme, grid, rows, record_steps, direction=None):
    ens = PathEnsemble(
        times=t + dt * np.arange(steps + 1),
        scheme=scheme,
        grid=grid,
        path_ids=np.arange(rows),
        terminal_present=_concat(results, "x0"),
        terminal_history=_concat(results, "x1"),
        present=_concat(results, "present"),
        record_steps=np.asarray(sorted(record_steps), dtype=int),
        states_present=_concat(results, "sp"),
        states_history=_concat(results, "sh"),
    )
    tangent = None
    if results[0]["z0"] is not None:
        tangent = PathEnsemble(
            times=ens.times, scheme=scheme, grid=grid, path_ids=ens.path_ids,
            terminal_present=_concat(results, "z0"), terminal_history=_concat(results, "z1"),
            direction=direction,
        )
    return ens, tangent


def _check_state(x, spec: ModelSpec):
    """Normalise a state or a batch ``(x0s, x1s)`` to arrays (B, m), (B, m, N)."""
    if isinstance(x, LiftedState):
        if x.grid != spec.grid or x.dim != spec.m:
            raise ConfigError("initial state does not match the model grid or dimension")
        return x.present[None, :], x.history[None, :, :]
    x0s = np.asarray(x[0], dtype=float)
    x1s = np.asarray(x[1], dtype=float)
    if x0s.ndim != 2 or x0s.shape[1] != spec.m or x1s.shape != (x0s.shape[0], spec.m, spec.grid.nodes):
        raise ConfigError("state batch does not match the model grid or dimension")
    if not (np.all(np.isfinite(x0s)) and np.all(np.isfinite(x1s))):
        raise NumericalError("initial states have non-finite entries")
    return x0s, x1s


def _pair_batches(x, tangent, spec):
    x0s, x1s = _check_state(x, spec)
    if tangent is None:
        return (x0s, x1s), None
    z0s, z1s = _check_state(tangent, spec)
    if z0s.shape[0] == 1 and x0s.shape[0] > 1:
        z0s = np.repeat(z0s, x0s.shape[0], axis=0)
        z1s = np.repeat(z1s, x0s.shape[0], axis=0)
    if z0s.shape[0] != x0s.shape[0]:
        raise ConfigError("need one direction per initial state")
    return (x0s, x1s), (z0s, z1s)


def _record_list(record_steps, steps):
    if record_steps is None:
        return []
    if isinstance(record_steps, str) and record_steps == "all":
        return list(range(steps + 1))
    return sorted(int(s) for s in record_steps if 0 <= int(s) <= steps)


def simulate_mild(t: float, x: LiftedState, spec: ModelSpec, cfg: SimConfig, *,
                  record_present: bool = False, record_steps=None, tangent: LiftedState | None = None):
    """Splitting scheme ``X <- S_dt (X + dt G(X) + Sigma(X) dW)``.

    With ``tangent`` the linearised recursion is co-simulated on the same
    noise and ``(ensemble, tangent_ensemble)`` is returned.
    """
    init, tinit = _pair_batches(x, tangent, spec)
    k0, steps = time_steps(t, spec.horizon, cfg.dt)
    fine, coarse_idx, kernels = _fine_setup(spec, cfg.dt)
    rec = _record_list(record_steps, steps)
    init = init + (_to_fine(init[1], spec.grid, fine),)
    if tinit is not None:
        tinit = tinit + (_to_fine(tinit[1], spec.grid, fine),)
    total = init[0].shape[0] * cfg.paths

    def work(rows):
        return _mild_chunk(rows, t, init, spec, cfg, k0, steps, fine, coarse_idx, kernels,
                           tinit, record_present, rec)

    results = run_chunked(work, total, cfg.chunk, cfg.threads)
    ens, tan = _assemble(results, t, steps, cfg.dt, "mild", spec.grid, total, rec,
                         tangent if isinstance(tangent, LiftedState) else None)
    return (ens, tan) if tangent is not None else ens


# ---------------------------------------------------------------- Yosida scheme

def _yosida_chunk(rows, t, init, spec, mc, cfg, n, k0, steps, sub, tangent, record_present, record_steps):
    m = spec.m
    ids, sidx = rows % cfg.paths, rows // cfg.paths
    P = len(rows)
    amat_t = yosida_matrix(n, spec.grid).T
    S = stack(init[0][sidx], init[1][sidx])
    Z = stack(tangent[0][sidx], tangent[1][sidx]) if tangent is not None else None
    dW = brownian_increments(cfg, ids, k0, steps, m, sub)
    h = cfg.dt / sub
    present = np.empty((P, steps + 1, m)) if record_present else None
    if present is not None:
        present[:, 0] = S[..., 0]
    rec = set(record_steps)
    sp, sh = [], []
    if 0 in rec:
        sp.append(S[..., 0].copy())
        sh.append(S[..., 1:].copy())
    for k in range(steps):
        for j in range(sub):
            tk = t + k * cfg.dt + j * h
            p = mc.project_stacked(S)
            if Z is None:
                sig = mc.sigma_from_coords(tk, p)
            else:
                sig, jac = mc.sigma_with_jacobian(tk, p)
            inc = dW[:, k, j]
            if Z is not None:
                pz = mc.project_stacked(Z)
                dsig = np.einsum("pijk,pk->pij", jac, pz)
                Znew = Z + h * (Z @ amat_t + mc.drift_linear_from_coords(pz))
                Znew[..., 0] += np.einsum("pij,pj->pi", dsig, inc)
                Z = Znew
            Snew = S + h * (S @ amat_t + mc.drift_from_coords(p))
            Snew[..., 0] += np.einsum("pij,pj->pi", sig, inc)
            S = Snew
        if not np.all(np.isfinite(S)):
            raise NumericalError(f"non-finite state at step {k0 + k + 1}", step=k0 + k + 1)
        if present is not None:
            present[:, k + 1] = S[..., 0]
        if k + 1 in rec:
            sp.append(S[..., 0].copy())
            sh.append(S[..., 1:].copy())
    return {
        "x0": S[..., 0].copy(), "x1": S[..., 1:].copy(), "present": present,
        "sp": np.stack(sp, axis=1) if sp else None,
        "sh": np.stack(sh, axis=1) if sh else None,
        "z0": None if Z is None else Z[..., 0].copy(),
        "z1": None if Z is None else Z[..., 1:].copy(),
    }


def yosida_substeps_for(n: int, dt: float) -> int:
    return max(1, int(math.ceil(2.0 * n * dt - 1e-12)))


def simulate_yosida(n: int, t: float, x: LiftedState, spec: ModelSpec, mc: MollifiedCoefficients,
                    cfg: SimConfig, *, record_present: bool = False, record_steps=None,
                    tangent: LiftedState | None = None):
    """Euler-Maruyama with drift ``A_n X + G_n(X)`` and noise ``Sigma_n(X) dW``.

    Each step of ``cfg.dt`` is split into substeps of at most ``1/(2n)``
    with bridged increments, so the coarse increments match the splitting
    scheme under the same seed.
    """
    if mc is None or mc.spec is not spec:
        raise ConfigError("mollified coefficients must be built from the same model")
    if mc.n != n:
        raise ConfigError(f"coefficients were built for n={mc.n}, not {n}")
    init, tinit = _pair_batches(x, tangent, spec)
    k0, steps = time_steps(t, spec.horizon, cfg.dt)
    sub = yosida_substeps_for(n, cfg.dt)
    rec = _record_list(record_steps, steps)
    total = init[0].shape[0] * cfg.paths

    def work(rows):
        return _yosida_chunk(rows, t, init, spec, mc, cfg, n, k0, steps, sub, tinit, record_present, rec)

    results = run_chunked(work, total, cfg.chunk, cfg.threads)
    ens, tan = _assemble(results, t, steps, cfg.dt, f"yosida({n})", spec.grid, total, rec,
                         tangent if isinstance(tangent, LiftedState) else None)
    return (ens, tan) if tangent is not None else ens


def first_variation(n: int, t: float, x: LiftedState, y: LiftedState, spec: ModelSpec,
                    mc: MollifiedCoefficients, cfg: SimConfig):
    """Directional derivative process of the Yosida scheme along ``y``.

    Returns ``(ensemble, first_variation_ensemble)`` on common noise.
    """
    return simulate_yosida(n, t, x, spec, mc, cfg, tangent=y)


def convergence_report(t: float, x: LiftedState, spec: ModelSpec, cfg: SimConfig, n_list,
                       mc_factory=None, max_dim: int = 4):
    """Rows ``(n, max over time of sqrt(E |X_n - X|_B^2))`` against the splitting scheme."""
    k0, steps = time_steps(t, spec.horizon, cfg.dt)
    every = max(1, steps // 8)
    rec = list(range(0, steps + 1, every))
    if rec[-1] != steps:
        rec.append(steps)
    base = simulate_mild(t, x, spec, cfg.with_(scheme="mild"), record_steps=rec)
    rows = []
    for n in n_list:
        mc = mc_factory(n) if mc_factory else MollifiedCoefficients(spec, n, max_dim=max_dim)
        ens = simulate_yosida(n, t, x, spec, mc, cfg.with_(scheme="yosida", n=n), record_steps=rec)
        d0 = ens.states_present - base.states_present
        d1 = ens.states_history - base.states_history
        dist = b_norm_arrays(d0, d1, spec.grid)  # (paths, times)
        rms = np.sqrt(np.mean(dist ** 2, axis=0))
        rows.append((int(n), float(np.max(rms))))
    return rows
