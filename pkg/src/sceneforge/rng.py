"""Counter-based random numbers.

Every stochastic kernel in the package draws from a stateless hash of
(seed, stream, slot) so results are bitwise reproducible regardless of
evaluation order or thread count.
"""

from __future__ import annotations

import numba
import numpy as np

_C1 = np.uint64(0x9E3779B97F4A7C15)
_C2 = np.uint64(0xBF58476D1CE4E5B9)
_C3 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@numba.njit(numba.uint64(numba.uint64), inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _C2
    z = (z ^ (z >> np.uint64(27))) * _C3
    return z ^ (z >> np.uint64(31))


@numba.njit(numba.uint64(numba.uint64, numba.uint64, numba.uint64), inline="always")
def hash3(seed, stream, slot):
    h = _mix(seed * _C1 + _C1)
    h = _mix(h ^ (stream * _C2 + _C1))
    h = _mix(h ^ (slot * _C3 + _C1))
    return h


@numba.njit(numba.float64(numba.uint64, numba.uint64, numba.uint64), inline="always")
def rand3(seed, stream, slot):
    """Uniform float64 in [0, 1) keyed by (seed, stream, slot)."""
    return float(hash3(seed, stream, slot) >> np.uint64(11)) * _INV53


def rand(seed: int, stream: int, slot: int) -> float:
    """Python-side wrapper around :func:`rand3` (same bit stream)."""
    return rand3(np.uint64(seed), np.uint64(stream), np.uint64(slot))


def rand_array(seed: int, stream: int, n_slots: int, offset: int = 0) -> np.ndarray:
    """Vector of counter-based uniforms for slots offset..offset+n_slots-1."""
    out = np.empty(n_slots, dtype=np.float64)
    s, t = np.uint64(seed), np.uint64(stream)
    for i in range(n_slots):
        out[i] = rand3(s, t, np.uint64(offset + i))
    return out
