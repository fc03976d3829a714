"""Counter-based seed derivation.

``seed_for(base, level, index)`` packs ``(level, index)`` into one 64-bit
counter, xors it with a scrambled base and pushes the result through the
splitmix64 finaliser.  The finaliser is a bijection on 64-bit words, so for
a fixed base distinct counters always give distinct seeds.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
INDEX_BITS = 40
LEVEL_BITS = 64 - INDEX_BITS
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """splitmix64 output function (bijective)."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * _M1) & MASK64
    x = ((x ^ (x >> 27)) * _M2) & MASK64
    return x ^ (x >> 31)


def _counter(level: int, index: int) -> int:
    if not 0 <= level < (1 << LEVEL_BITS):
        raise ValueError(f"level {level} out of range")
    if not 0 <= index < (1 << INDEX_BITS):
        raise ValueError(f"sample index {index} out of range")
    return (level << INDEX_BITS) | index


def seed_for(base: int, level: int, index: int) -> int:
    scrambled = mix64((int(base) + _GOLDEN) & MASK64)
    return mix64(scrambled ^ _counter(int(level), int(index)))


def mix64_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * np.uint64(_M1)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(_M2)
    return x ^ (x >> np.uint64(31))


def seeds_for(base: int, level: int, indices) -> np.ndarray:
    """Vectorised :func:`seed_for`."""
    idx = np.asarray(indices, dtype=np.uint64)
    if idx.size and int(idx.max()) >= (1 << INDEX_BITS):
        raise ValueError("sample index out of range")
    scrambled = np.uint64(mix64((int(base) + _GOLDEN) & MASK64))
    counter = (np.uint64(level) << np.uint64(INDEX_BITS)) | idx
    return mix64_array(scrambled ^ counter)


def uniforms(seeds: np.ndarray, stream: int) -> np.ndarray:
    """One open-interval uniform per seed for a given stream number."""
    with np.errstate(over="ignore"):
        x = np.asarray(seeds, dtype=np.uint64) + np.uint64((stream + 1) * _GOLDEN & MASK64)
    bits = mix64_array(x) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) / 2.0**53
