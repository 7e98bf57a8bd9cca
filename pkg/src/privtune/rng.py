"""Counter-based deterministic random streams.

Every random draw in the package is a pure function of (key, counter), so
results never depend on call order, thread scheduling, or platform RNG
state.  Keys are derived by folding integer or string parts through the
SplitMix64 finalizer; the value at counter ``i`` is the finalizer applied
to ``key + (i+1)*GOLDEN``, which passes standard statistical batteries.

Normal variates use Box-Muller on two 64-bit uniforms per coordinate, so
coordinate ``j`` of a stream is the same no matter how the enclosing
vector is sized or partitioned.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_U64_GOLDEN = np.uint64(_GOLDEN)
_U64_C1 = np.uint64(0xBF58476D1CE4E5B9)
_U64_C2 = np.uint64(0x94D049BB133111EB)
_SH30 = np.uint64(30)
_SH27 = np.uint64(27)
_SH31 = np.uint64(31)
_SH11 = np.uint64(11)

# 2**-53, spacing of doubles in [0, 1)
_INV53 = 1.0 / (1 << 53)


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def _mix(z: int) -> int:
    """SplitMix64 finalizer on a Python int (mod 2**64)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_key(*parts: int | str) -> int:
    """Fold seed components (ints or string tags) into a 64-bit stream key.

    Folding is injective in each part given the previous state, so streams
    keyed by distinct (seed, tag, step, task) tuples do not collide in
    practice.
    """
    key = 0
    for part in parts:
        if isinstance(part, str):
            word = fnv1a_64(part.encode("utf-8"))
        else:
            word = int(part) & _MASK64
        key = _mix((key + word + _GOLDEN) & _MASK64)
    return key


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _SH30)) * _U64_C1
    z = (z ^ (z >> _SH27)) * _U64_C2
    return z ^ (z >> _SH31)


def raw_uint64(key: int, start: int, count: int) -> np.ndarray:
    """64-bit words of the keyed stream at counters start..start+count-1."""
    if count < 0:
        raise ValueError("count must be >= 0")
    counters = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    state = np.uint64(key & _MASK64) + counters * _U64_GOLDEN
    return _mix_array(state)


def uniforms(key: int, count: int, start: int = 0) -> np.ndarray:
    """iid uniforms in [0, 1) at counters start..start+count-1."""
    bits = raw_uint64(key, start, count)
    return (bits >> _SH11).astype(np.float64) * _INV53


def normals(key: int, count: int, start: int = 0) -> np.ndarray:
    """iid standard normals; coordinate j consumes counters (2(start+j), 2(start+j)+1).

    Box-Muller cosine branch; u1 is shifted into (0, 1] so the log is
    always defined.
    """
    if count == 0:
        return np.zeros(0)
    idx = np.arange(start, start + count, dtype=np.int64)
    c1 = (2 * idx + 1).astype(np.uint64)
    c2 = (2 * idx + 2).astype(np.uint64)
    s1 = _mix_array(np.uint64(key & _MASK64) + c1 * _U64_GOLDEN)
    s2 = _mix_array(np.uint64(key & _MASK64) + c2 * _U64_GOLDEN)
    u1 = ((s1 >> _SH11).astype(np.float64) + 1.0) * _INV53
    u2 = (s2 >> _SH11).astype(np.float64) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def choice_without_replacement(key: int, n: int, size: int) -> np.ndarray:
    """Uniform fixed-size subset of range(n), returned in ascending order.

    Sorting iid uniforms yields a uniform permutation; the first ``size``
    ranks form a uniform subset.  Ascending output pins the reduction
    order downstream.
    """
    if not 0 <= size <= n:
        raise ValueError(f"cannot draw {size} from {n} items")
    u = uniforms(key, n)
    picked = np.argsort(u, kind="stable")[:size]
    return np.sort(picked)
