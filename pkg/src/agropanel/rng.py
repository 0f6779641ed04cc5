"""Reproducible, splittable random streams.

A stream is identified by a root seed and a path of integers (e.g. unit
index, iteration number).  The path is folded into a 128-bit key with the
SplitMix64 finalizer and handed to NumPy's counter-based Philox generator,
so any stream can be created independently of the others and parallel
execution never changes the draws.

SplitMix64 constants (Steele, Lea and Flood 2014)::

    GAMMA = 0x9E3779B97F4A7C15
    M1    = 0xBF58476D1CE4E5B9   (after xor-shift 30)
    M2    = 0x94D049BB133111EB   (after xor-shift 27, final xor-shift 31)
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
M1 = 0xBF58476D1CE4E5B9
M2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    """One SplitMix64 step: advance by the golden gamma and mix."""
    z = (x + GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * M1) & MASK64
    z = ((z ^ (z >> 27)) * M2) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, *path: int) -> tuple[int, int]:
    """Two 64-bit words derived from ``seed`` and the stream path."""
    if int(seed) < 0:
        raise ValueError("seed must be non-negative")
    h = splitmix64(int(seed) & MASK64)
    for p in path:
        h = splitmix64(h ^ (int(p) & MASK64))
    return h, splitmix64(h ^ 0xA5A5A5A5A5A5A5A5)


def stream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for ``(seed, *path)``."""
    lo, hi = stream_key(seed, *path)
    return np.random.Generator(np.random.Philox(key=lo | (hi << 64)))
