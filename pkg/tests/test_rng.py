import numpy as np
import pytest
from scipy import stats

from delayhedge.rng import derive_seed, normals, philox4x64, seed_key, uniforms


def numpy_block(counter, key):
    """One Philox-4x64-10 block from numpy's bit generator (it increments before use)."""
    c = np.array(counter, dtype=np.uint64)
    prev = c.copy()
    for i in range(4):
        if prev[i] > 0:
            prev[i] -= np.uint64(1)
            break
        prev[i] = np.uint64(2 ** 64 - 1)
    bg = np.random.Philox(key=np.array(key, dtype=np.uint64), counter=prev)
    return bg.random_raw(4)


@pytest.mark.parametrize("counter,key", [
    ((1, 0, 0, 0), (0, 0)),
    ((5, 7, 2, 9), (123456789, 3)),
    ((2 ** 63, 1, 0, 2 ** 40), (2 ** 64 - 1, 4)),
])
def test_philox_matches_numpy(counter, key):
    ours = philox4x64(np.array([counter], dtype=np.uint64), key)[0]
    np.testing.assert_array_equal(ours, numpy_block(counter, key))


def test_draws_are_keyed_not_ordered():
    full = normals(7, "pricing", np.arange(50), np.arange(10), 3)
    part = normals(7, "pricing", [13, 2], [4, 9], 3)
    np.testing.assert_array_equal(part[0, 0], full[13, 4])
    np.testing.assert_array_equal(part[1, 1], full[2, 9])


def test_streams_and_extra_are_disjoint():
    a = normals(1, "pricing", np.arange(20), [0], 2)
    b = normals(1, "market", np.arange(20), [0], 2)
    c = normals(1, "pricing", np.arange(20), [0], 2, extra=1)
    assert not np.allclose(a, b) and not np.allclose(a, c)
    assert seed_key(1, "delta") == (1, 2)


def test_normals_look_normal():
    z = normals(3, "probe", np.arange(20000), [0], 1).ravel()
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert stats.kstest(z, "norm").pvalue > 1e-3


def test_uniforms_range_and_determinism():
    u = uniforms(5, "mollifier", 1001)
    assert u.shape == (1001,) and np.all((u > 0) & (u < 1))
    np.testing.assert_array_equal(u, uniforms(5, "mollifier", 1001))


def test_derive_seed_stable():
    assert derive_seed(1, "delta", 3) == derive_seed(1, "delta", 3)
    assert derive_seed(1, "delta", 3) != derive_seed(1, "delta", 4)
    assert 0 <= derive_seed("x") < 2 ** 64
