"""Counter-based random numbers for order-independent simulation.

Every draw is a pure function of ``(seed, block, stream, counter)``: a
SplitMix64 finalizer applied to a per-stream key plus a Weyl step in the
counter.  Arrays of keys and counters are evaluated in one vectorized
pass, so any subset of blocks can be generated in any order (or in
parallel) and still reproduce the same numbers.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_INV53 = 1.0 / (1 << 53)


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 output function (bijective on uint64)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def stream_keys(seed: int, blocks, stream: int) -> np.ndarray:
    """One 64-bit key per block for the given stream id."""
    blocks = np.asarray(blocks, dtype=np.uint64)
    with np.errstate(over="ignore"):
        k = mix64(np.uint64(seed) + _GOLDEN)
        k = mix64(k ^ (np.uint64(stream) * _M2 + _GOLDEN))
        return mix64(k + blocks * _GOLDEN)


def raw64(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(keys + (counters + np.uint64(1)) * _GOLDEN)


def uniform(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Doubles in [0, 1) with 53 random bits."""
    return (raw64(keys, counters) >> _S11).astype(np.float64) * _INV53


def normal(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Standard normals by Box-Muller from counters ``2c`` and ``2c + 1``."""
    c = np.asarray(counters, dtype=np.uint64) * np.uint64(2)
    u1 = 1.0 - uniform(keys, c)  # (0, 1]
    u2 = uniform(keys, c + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
