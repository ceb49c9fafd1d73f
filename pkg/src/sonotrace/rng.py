"""Counter-based random numbers.

Every draw is a pure function of an integer key tuple, so results do not
depend on thread scheduling or on the order in which paths are traced.
The mixer is the SplitMix64 finalizer applied to a chained key.
"""

import math

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@nb.njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True)
def hash_key(seed, a, b, c, d):
    """64-bit hash of ``(seed, a, b, c, d)``; negative integers are allowed."""
    h = mix64(np.uint64(seed) + _GOLDEN)
    h = mix64(h ^ (np.uint64(a) + _GOLDEN))
    h = mix64(h ^ (np.uint64(b) + _GOLDEN))
    h = mix64(h ^ (np.uint64(c) + _GOLDEN))
    h = mix64(h ^ (np.uint64(d) + _GOLDEN))
    return h


@nb.njit(cache=True)
def uniform(seed, a, b, c, d):
    """Uniform double in [0, 1) keyed by the integer tuple."""
    return np.float64(hash_key(seed, a, b, c, d) >> _S11) * _INV53


@nb.njit(cache=True)
def standard_normal(seed, a, b, c, d):
    """Box-Muller normal built from two keyed uniforms."""
    u1 = uniform(seed, a, b, c, 2 * d)
    u2 = uniform(seed, a, b, c, 2 * d + 1)
    return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


@nb.njit(cache=True, parallel=True)
def _uniform_array(seed, a, b, c, d, out):
    for i in nb.prange(out.size):
        out[i] = uniform(seed, a[i], b[i], c[i], d[i])
    return out


def uniform_array(seed, a, b=0, c=0, d=0):
    """Vectorised :func:`uniform` over broadcast integer key arrays."""
    a, b, c, d = np.broadcast_arrays(
        np.asarray(a, np.int64), np.asarray(b, np.int64),
        np.asarray(c, np.int64), np.asarray(d, np.int64))
    out = np.empty(a.shape, dtype=np.float64)
    _uniform_array(np.int64(seed), a.ravel(), b.ravel(), c.ravel(), d.ravel(), out.reshape(-1))
    return out


def derive_seed(*parts):
    """Combine integers (or strings) into a non-negative 63-bit seed."""
    acc = 0
    for i, p in enumerate(parts):
        if isinstance(p, str):
            p = int.from_bytes(p.encode("utf-8")[:8].ljust(8, b"\0"), "little")
        acc = int(hash_key(np.int64(acc & 0x7FFFFFFFFFFFFFFF), np.int64(int(p) & 0x7FFFFFFFFFFFFFFF), i, 0, 0))
    return acc & 0x7FFFFFFFFFFFFFFF
