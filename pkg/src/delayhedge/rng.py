"""Counter-based normal variates keyed by (seed, stream, path, step).

Draws are a pure function of their key, so results do not depend on how the
paths are chunked or scheduled across threads.  The block function is
Philox-4x64-10 evaluated on whole arrays of counters at once; it agrees with
``numpy.random.Philox`` for the same key and counter.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

# stream namespaces keep pricing, hedging markets and nested deltas disjoint
STREAMS = {"pricing": 0, "market": 1, "delta": 2, "probe": 3, "mollifier": 4}


def _mulhilo(a: np.uint64, b: np.ndarray):
    a_lo, a_hi = a & _LO, a >> _S32
    b_lo, b_hi = b & _LO, b >> _S32
    p00 = a_lo * b_lo
    p01 = a_lo * b_hi
    p10 = a_hi * b_lo
    p11 = a_hi * b_hi
    mid = (p00 >> _S32) + (p01 & _LO) + (p10 & _LO)
    hi = p11 + (p01 >> _S32) + (p10 >> _S32) + (mid >> _S32)
    return hi, a * b


def philox4x64(counter: np.ndarray, key) -> np.ndarray:
    """Philox-4x64 with 10 rounds; ``counter`` has shape (..., 4), key is two words."""
    c = np.asarray(counter, dtype=np.uint64)
    c0, c1, c2, c3 = (c[..., i].copy() for i in range(4))
    k0, k1 = np.uint64(key[0]), np.uint64(key[1])
    with np.errstate(over="ignore"):
        for r in range(10):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=-1)


def seed_key(seed: int, stream: str | int = "pricing") -> tuple[int, int]:
    """Two-word Philox key from a user seed and a stream namespace."""
    ns = STREAMS[stream] if isinstance(stream, str) else int(stream)
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed, ns


def uniforms_to_normals(bits: np.ndarray) -> np.ndarray:
    u = ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
    return ndtri(u)


def normals(seed: int, stream, paths, steps, dim: int, extra: int = 0) -> np.ndarray:
    """Standard normals with shape ``(len(paths), len(steps), dim)``.

    Entry ``[p, k, j]`` depends only on ``(seed, stream, paths[p], steps[k],
    j, extra)``; ``extra`` separates independent families sharing a key.
    """
    paths = np.asarray(paths, dtype=np.uint64).reshape(-1)
    steps = np.asarray(steps, dtype=np.uint64).reshape(-1)
    blocks = (dim + 3) // 4
    key = seed_key(seed, stream)
    ctr = np.empty((paths.size, steps.size, blocks, 4), dtype=np.uint64)
    ctr[..., 0] = paths[:, None, None]
    ctr[..., 1] = steps[None, :, None]
    ctr[..., 2] = np.arange(blocks, dtype=np.uint64)[None, None, :]
    ctr[..., 3] = np.uint64(extra)
    bits = philox4x64(ctr, key).reshape(paths.size, steps.size, blocks * 4)[..., :dim]
    return uniforms_to_normals(bits)


def uniforms(seed: int, stream, count: int, extra: int = 0) -> np.ndarray:
    """``count`` uniforms in (0, 1) from one keyed family."""
    key = seed_key(seed, stream)
    blocks = (count + 3) // 4
    ctr = np.zeros((blocks, 4), dtype=np.uint64)
    ctr[:, 0] = np.arange(blocks, dtype=np.uint64)
    ctr[:, 3] = np.uint64(extra)
    bits = philox4x64(ctr, key).reshape(-1)[:count]
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary printable parts."""
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")
