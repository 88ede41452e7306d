"""Counter-based 64-bit hashing used for every random draw in the package.

All randomness is a pure function of integer keys, so an infinite i.i.d.
environment (or a family of Monte Carlo replicates) can be queried lazily,
in any order, from any thread, and always give the same bits.

Constants
---------
``GAMMA``  0x9E3779B97F4A7C15   golden-ratio increment (SplitMix64)
``MIX1``   0xBF58476D1CE4E5B9   SplitMix64 finalizer multiplier 1
``MIX2``   0x94D049BB133111EB   SplitMix64 finalizer multiplier 2

Site keys are built by zig-zag encoding each signed coordinate
(``(c << 1) ^ (c >> 63)``) and folding it into the running hash with
``h <- mix64(h ^ mix64(zz + (k + 1) * GAMMA))`` for axis ``k``.
"""

from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)

# stream tags keep the different consumers of the hash decorrelated
TAG_SITE = 0x51_7E_00_01
TAG_RESAMPLE = 0x51_7E_00_02
TAG_REPLICATE = 0x51_7E_00_03
TAG_PATH = 0x51_7E_00_04

_MASK = (1 << 64) - 1


def _u64(x) -> np.ndarray:
    """Coerce Python ints / int arrays to uint64 with two's-complement wrap."""
    if isinstance(x, (int, np.integer)):
        return np.array([int(x) & _MASK], dtype=np.uint64)
    arr = np.asarray(x)
    if arr.dtype == np.uint64:
        return arr
    return arr.astype(np.int64).view(np.uint64)


def _step(n: int) -> np.uint64:
    """``n * GAMMA`` modulo 2**64, computed without numpy overflow warnings."""
    return np.uint64((n * int(GAMMA)) & _MASK)


def mix64(z) -> np.ndarray:
    """SplitMix64 finalizer, elementwise on a uint64 array."""
    z = np.array(_u64(z), dtype=np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= MIX1
    z ^= z >> np.uint64(27)
    z *= MIX2
    z ^= z >> np.uint64(31)
    return z


def zigzag(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.int64)
    return ((c << 1) ^ (c >> 63)).view(np.uint64)


def seed_key(seed: int, tag: int) -> np.uint64:
    """Scalar key for a (seed, stream tag) pair."""
    return seed_keys(seed, tag)[0]


def seed_keys(seeds, tag: int) -> np.ndarray:
    """Keys for an array of seeds under one stream tag."""
    return mix64(mix64(seeds) ^ mix64(tag))


def combine(key, value) -> np.ndarray:
    """Fold an integer (array) into a key (array); broadcasts."""
    return mix64(_u64(key) ^ mix64(_u64(value) + _step(1)))


def site_keys(key, coords) -> np.ndarray:
    """Hash lattice coordinates of shape ``(..., d)`` under ``key``."""
    coords = np.asarray(coords, dtype=np.int64)
    h = np.broadcast_to(_u64(key), coords.shape[:-1]).copy() if coords.ndim > 1 \
        else _u64(key).copy()
    for k in range(coords.shape[-1]):
        zz = zigzag(coords[..., k])
        h = mix64(h ^ mix64(zz + _step(k + 1)))
    return h


def draw_bits(keys, j: int) -> np.ndarray:
    """The ``j``-th 64-bit draw of each key."""
    return mix64(_u64(keys) + _step(j + 1))


def to_unit(bits) -> np.ndarray:
    """Map uint64 to doubles strictly inside (0, 1)."""
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def uniforms(keys, j: int) -> np.ndarray:
    return to_unit(draw_bits(keys, j))


def replicate_seed(master_seed: int, index) -> np.ndarray:
    """Per-replicate seed: avalanche mix of (master seed, replicate index)."""
    return combine(seed_key(master_seed, TAG_REPLICATE), index)


def replicate_seed_int(master_seed: int, index: int) -> int:
    """:func:`replicate_seed` for a single index, as a Python integer."""
    return int(replicate_seed(master_seed, np.array([index], dtype=np.int64))[0])


def as_int(u: np.uint64) -> int:
    return int(u)
