"""Seed derivation.

Every random draw in the pipeline descends from one master seed. Child seeds
are produced by mixing the parent with a stable hash of a string tag and
passing the result through splitmix64, so the same (seed, tag) pair always
yields the same child regardless of call order.
"""
import zlib

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, *tags) -> int:
    """Child seed for ``seed`` along the path ``tags`` (str or int parts)."""
    s = int(seed) & _MASK
    for tag in tags:
        h = zlib.crc32(str(tag).encode("utf-8"))
        s = splitmix64(s ^ (h << 32 | h))
    return s


def rng_for(seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *tags))
