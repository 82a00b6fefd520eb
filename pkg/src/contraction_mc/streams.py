"""Counter-based random streams.

Every random quantity in the package is a pure function of a 64-bit key and
an integer counter, so samples can be generated in any order, in any chunking,
on any number of threads and still come out bit-identical.

Key derivation (stable across versions)::

    root_key(seed)     = mix64(seed + GOLDEN)
    derive(key, j)     = mix64(mix64(key) ^ (j * GOLDEN + STREAM))
    uniform(key, j)    = (mix64(derive(key, j)) >> 11 + 0.5) * 2**-53

``mix64`` is the SplitMix64 finalizer.  All arithmetic is modulo 2**64.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
STREAM = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


def _u64(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=np.uint64))


def mix64(x) -> np.ndarray:
    x = _u64(x)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> _S30)) * _M1
        x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


def root_key(seed: int) -> np.uint64:
    """Map a user seed (any nonnegative int < 2**64) to a stream key."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    with np.errstate(over="ignore"):
        return mix64(np.uint64(seed) + GOLDEN)[0]


def derive(keys, j) -> np.ndarray:
    """Child keys; broadcasts ``keys`` against counters ``j``."""
    j = _u64(j)
    with np.errstate(over="ignore"):
        return mix64(mix64(keys) ^ (j * GOLDEN + STREAM))


def uniform(keys, j=0) -> np.ndarray:
    """Uniforms in the open interval (0, 1), one per (key, counter) pair."""
    bits = mix64(derive(keys, j)) >> _S11
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def normal(keys, j=0) -> np.ndarray:
    return ndtri(uniform(keys, j))


def child_keys(key, count: int) -> np.ndarray:
    """Keys for samples ``0..count-1`` under ``key``."""
    return derive(np.uint64(key), np.arange(count, dtype=np.uint64))


def generator(key) -> np.random.Generator:
    """A numpy Generator seeded from one stream key (for samplers that need one)."""
    return np.random.Generator(np.random.Philox(key=int(_u64(key)[0])))


def uniform_index(keys, size: int, j=0) -> np.ndarray:
    idx = np.floor(uniform(keys, j) * size).astype(np.int64)
    return np.minimum(idx, size - 1)
