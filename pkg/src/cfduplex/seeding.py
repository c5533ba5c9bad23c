"""Deterministic seed derivation.

Every random stream in the package is built from a 64-bit root seed and a
short tuple of integer keys (trial index, stream tag, ...). Keys are folded
in one at a time with a splitmix64 finalizer, so derived seeds do not depend
on execution order or thread count.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# stream tags used across the package
GEOMETRY = 1
SHADOWING = 2
COLORING = 3
MC_UL = 4
MC_DL = 5
MC_CROSS = 6
MC_NORM = 7


def splitmix64(x: int) -> int:
    """One splitmix64 output step applied to ``x``."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Fold ``keys`` into ``seed``: s <- splitmix64(s xor key) per key."""
    s = splitmix64(int(seed) & MASK64)
    for key in keys:
        s = splitmix64(s ^ (int(key) & MASK64))
    return s


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
