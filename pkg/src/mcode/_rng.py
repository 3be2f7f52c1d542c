"""Counter-based random streams.

Every particle owns a 64-bit key; its lifetime and branch choice are hashes
of that key, and children derive their keys from the parent's key and their
slot.  A sample is therefore a pure function of (seed, stream, index), no
matter which backend, traversal order or chunking produced it.

The ``*_u64`` helpers operate on numpy uint64 values (scalars inside numba,
arrays in the numpy backend); the plain-int versions serve the reference
sampler.
"""

import numpy as np

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
C_CHILD = 0xD1B54A32D192ED03
C_DRAW = 0xA0761D6478BD642F
C_STREAM = 0xE7037ED1A0B428DB
M1 = 0xBF58476D1CE4E5B9
M2 = 0x94D049BB133111EB
INV_2_53 = 1.0 / 9007199254740992.0

U_GOLDEN = np.uint64(GOLDEN)
U_CHILD = np.uint64(C_CHILD)
U_DRAW = np.uint64(C_DRAW)
U_M1 = np.uint64(M1)
U_M2 = np.uint64(M2)
U_1 = np.uint64(1)
U_11 = np.uint64(11)
U_27 = np.uint64(27)
U_30 = np.uint64(30)
U_31 = np.uint64(31)


def mix64(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * M1) & MASK
    z = ((z ^ (z >> 27)) * M2) & MASK
    return z ^ (z >> 31)


def stream_key(seed: int, *stream: int) -> int:
    """Base key for one estimator stream (seed plus e.g. patch/point/component)."""
    k = mix64(int(seed) + GOLDEN)
    for s in stream:
        k = mix64(k ^ ((int(s) + 1) * C_STREAM))
    return k


def sample_key(base: int, index: int) -> int:
    return mix64(base + (int(index) + 1) * GOLDEN)


def child_key(key: int, slot: int) -> int:
    return mix64(key + (slot + 1) * C_CHILD)


def uniform(key: int, j: int) -> float:
    """j-th uniform variate of a particle, in the open interval (0, 1)."""
    return ((mix64(key ^ ((j + 1) * C_DRAW)) >> 11) + 0.5) * INV_2_53


def mix64_u64(z):
    z = (z ^ (z >> U_30)) * U_M1
    z = (z ^ (z >> U_27)) * U_M2
    return z ^ (z >> U_31)


def sample_key_u64(base, index):
    return mix64_u64(base + (index + U_1) * U_GOLDEN)


def child_key_u64(key, slot):
    return mix64_u64(key + (slot + U_1) * U_CHILD)


def uniform_u64(key, j):
    z = mix64_u64(key ^ ((j + U_1) * U_DRAW))
    return ((z >> U_11) + 0.5) * INV_2_53
