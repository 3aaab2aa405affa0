"""Seeded random streams.

Every sampler in the package draws from a xoshiro256** generator whose state
lives in a small ``uint64`` array so that numba kernels can advance it in
place.  Seeding goes through splitmix64, and per-replica streams are derived by
hashing ``(seed, stream)``, so results depend only on those two integers.

State layout: ``state[0:4]`` xoshiro words, ``state[4]`` a buffer of unused
random bits, ``state[5]`` the number of bits left in that buffer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
STATE_SIZE = 6


def _splitmix64(x: int) -> tuple[int, int]:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def mix64(*words: int) -> int:
    """Hash a sequence of integers into one 64-bit word (order sensitive)."""
    acc = 0x6A09E667F3BCC909
    for w in words:
        _, acc = _splitmix64((acc ^ (int(w) & MASK64)) & MASK64)
    return acc


@dataclass(frozen=True)
class RandomSource:
    """An immutable (seed, stream) pair naming one reproducible random stream."""

    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed <= MASK64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.stream < 0:
            raise ValueError("stream id must be nonnegative")

    def spawn(self, index: int) -> "RandomSource":
        """Child stream for replica ``index``; independent of scheduling order."""
        return RandomSource(self.seed, mix64(self.seed, self.stream, index))

    def state(self) -> np.ndarray:
        """Fresh generator state for this stream."""
        x = mix64(self.seed, self.stream)
        words = []
        for _ in range(4):
            x, z = _splitmix64(x)
            words.append(z)
        if not any(words):
            words[0] = 1
        return np.array(words + [0, 0], dtype=np.uint64)


def state_of(rng) -> np.ndarray:
    """Accept a RandomSource, an int seed or an existing state array."""
    if isinstance(rng, RandomSource):
        return rng.state()
    if isinstance(rng, np.ndarray):
        return rng
    return RandomSource(int(rng)).state()


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def next_u64(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True)
def next_direction(s):
    """Uniform integer in {0,1,2,3} using two buffered bits."""
    if s[5] == np.uint64(0):
        s[4] = next_u64(s)
        s[5] = np.uint64(32)
    d = s[4] & np.uint64(3)
    s[4] >>= np.uint64(2)
    s[5] -= np.uint64(1)
    return np.int64(d)


@njit(cache=True)
def randbelow(s, k):
    """Uniform integer in [0, k) for 1 <= k <= 2**32 (Lemire rejection)."""
    if k == 4:
        return next_direction(s)
    if k == 1:
        return np.int64(0)
    kk = np.uint64(k)
    threshold = (np.uint64(2**32) - kk) % kk
    while True:
        x = next_u64(s) >> np.uint64(32)
        m = x * kk
        low = m & np.uint64(0xFFFFFFFF)
        if low >= threshold:
            return np.int64(m >> np.uint64(32))


@njit(cache=True)
def uniform01(s):
    return np.float64(next_u64(s) >> np.uint64(11)) * (1.0 / 9007199254740992.0)
