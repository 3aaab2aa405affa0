"""Simple random walk on Z^2, chronological loop erasure and LERW sampling.

Stopping times follow the ``j >= 1`` convention: a walk started inside the
target set of a hitting rule does not stop at time 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
from numba import njit

from .lattice import Ball, Box, LatticePath, LatticeRegion, PointSet, as_point
from .rng import next_direction, state_of

DEFAULT_CAP = 10**9
DEFAULT_TRUNCATION_FACTOR = 32

DX = np.array([1, 0, -1, 0], dtype=np.int64)
DY = np.array([0, 1, 0, -1], dtype=np.int64)

FIXED, EXIT_BALL, EXIT_REGION, HIT_REGION = 0, 1, 2, 3


class CapExceeded(RuntimeError):
    """A walk ran past its hard step cap; ``partial`` holds the path so far."""

    def __init__(self, cap: int, partial: Optional[LatticePath] = None):
        super().__init__(f"step cap of {cap} exceeded; the stop rule is probably mis-specified")
        self.cap = cap
        self.partial = partial


@dataclass(frozen=True)
class StopRule:
    kind: str
    steps: int = 0
    radius: float = 0
    region: Optional[LatticeRegion] = None
    point: Optional[tuple] = None

    KINDS = ("fixed-steps", "exit-ball", "exit-region", "hit-region", "hit-point")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown stop rule {self.kind!r}")

    @classmethod
    def fixed(cls, n: int) -> "StopRule":
        return cls("fixed-steps", steps=int(n))

    @classmethod
    def exit_ball(cls, r) -> "StopRule":
        return cls("exit-ball", radius=r)

    @classmethod
    def exit_region(cls, region: LatticeRegion) -> "StopRule":
        return cls("exit-region", region=region)

    @classmethod
    def hit_region(cls, region: LatticeRegion) -> "StopRule":
        return cls("hit-region", region=region)

    @classmethod
    def hit_point(cls, w) -> "StopRule":
        return cls("hit-point", point=tuple(as_point(w)))

    def encode(self):
        """(mode, r2, nfix, mask, mx0, my0) for the numba kernels."""
        empty = np.zeros((1, 1), dtype=np.bool_)
        if self.kind == "fixed-steps":
            return FIXED, 0, self.steps, empty, 0, 0
        if self.kind == "exit-ball":
            return EXIT_BALL, math.floor(Fraction(self.radius) ** 2), 0, empty, 0, 0
        region = PointSet([self.point]) if self.kind == "hit-point" else self.region
        xmin, xmax, ymin, ymax = region.bounds()
        w, h = max(xmax - xmin + 1, 1), max(ymax - ymin + 1, 1)
        mask = np.zeros((w, h), dtype=np.bool_)
        for p in region.points():
            mask[p[0] - xmin, p[1] - ymin] = True
        mode = EXIT_REGION if self.kind == "exit-region" else HIT_REGION
        return mode, 0, 0, mask, xmin, ymin


@njit(cache=True, inline="always")
def _stopped(x, y, j, mode, r2, nfix, mask, mx0, my0):
    if mode == FIXED:
        return j >= nfix
    if mode == EXIT_BALL:
        return x * x + y * y > r2
    i = x - mx0
    k = y - my0
    inside = 0 <= i < mask.shape[0] and 0 <= k < mask.shape[1] and mask[i, k]
    if mode == EXIT_REGION:
        return not inside
    return inside


@njit(cache=True)
def _srw_fill(buf, n, j, mode, r2, nfix, mask, mx0, my0, state, cap):
    """Advance the walk into ``buf`` until it stops (1), hits the cap (2) or fills buf (0)."""
    x = buf[n - 1, 0]
    y = buf[n - 1, 1]
    while n < buf.shape[0]:
        d = next_direction(state)
        x += DX[d]
        y += DY[d]
        j += 1
        buf[n, 0] = x
        buf[n, 1] = y
        n += 1
        if _stopped(x, y, j, mode, r2, nfix, mask, mx0, my0):
            return n, j, 1
        if j >= cap:
            return n, j, 2
    return n, j, 0


@njit(cache=True)
def _srw_kernel(x, y, mode, r2, nfix, mask, mx0, my0, state, cap):
    buf = np.empty((4096, 2), dtype=np.int64)
    buf[0, 0] = x
    buf[0, 1] = y
    if mode == FIXED and nfix == 0:
        return buf[:1], True
    n, j, status = _srw_fill(buf, 1, 0, mode, r2, nfix, mask, mx0, my0, state, cap)
    while status == 0:
        nb = np.empty((2 * buf.shape[0], 2), dtype=np.int64)
        nb[:n] = buf[:n]
        buf = nb
        n, j, status = _srw_fill(buf, n, j, mode, r2, nfix, mask, mx0, my0, state, cap)
    return buf[:n], status == 1


# Open-addressing table (linear probing, backward-shift deletion) mapping a
# lattice point to its index on the current loop-erased path.

@njit(cache=True, inline="always")
def _pack(x, y):
    return (np.uint64(x + 2**31) << np.uint64(32)) | np.uint64(y + 2**31)


@njit(cache=True, inline="always")
def _slot(key, bits):
    return np.int64((key * np.uint64(0x9E3779B97F4A7C15)) >> np.uint64(64 - bits))


@njit(cache=True)
def _tab_find(keys, vals, bits, key):
    mask = (1 << bits) - 1
    i = _slot(key, bits)
    while vals[i] >= 0:
        if keys[i] == key:
            return i
        i = (i + 1) & mask
    return -1 - i


@njit(cache=True)
def _tab_delete(keys, vals, bits, i):
    mask = (1 << bits) - 1
    j = i
    while True:
        vals[i] = -1
        while True:
            j = (j + 1) & mask
            if vals[j] < 0:
                return
            k = _slot(keys[j], bits)
            # keep j unless its home slot lies cyclically in (i, j]
            if i <= j:
                if i < k <= j:
                    continue
            else:
                if k <= j or k > i:
                    continue
            break
        keys[i] = keys[j]
        vals[i] = vals[j]
        i = j


@njit(cache=True)
def _tab_insert(keys, vals, bits, key, value):
    s = _tab_find(keys, vals, bits, key)
    keys[-1 - s] = key
    vals[-1 - s] = value


@njit(cache=True)
def _lerw_fill(px, py, n, j, keys, vals, bits, mode, r2, nfix, mask, mx0, my0, state, cap):
    """Advance the erasing walk; status 1 stopped, 2 cap, 0 needs more room."""
    x = px[n - 1]
    y = py[n - 1]
    limit = min(px.shape[0], 1 << (bits - 1))
    while n < limit:
        d = next_direction(state)
        x += DX[d]
        y += DY[d]
        j += 1
        key = _pack(x, y)
        s = _tab_find(keys, vals, bits, key)
        if s >= 0:
            keep = vals[s] + 1
            for t in range(n - 1, keep - 1, -1):
                _tab_delete(keys, vals, bits, _tab_find(keys, vals, bits, _pack(px[t], py[t])))
            n = keep
        else:
            px[n] = x
            py[n] = y
            keys[-1 - s] = key
            vals[-1 - s] = n
            n += 1
        if _stopped(x, y, j, mode, r2, nfix, mask, mx0, my0):
            return n, j, 1
        if j >= cap:
            return n, j, 2
    return n, j, 0


@njit(cache=True)
def _lerw_kernel(x, y, mode, r2, nfix, mask, mx0, my0, state, cap):
    """Run SRW to its stopping time while erasing loops as they close.

    Returns (loop-erased path, raw step count, ok flag).
    """
    bits = 12
    keys = np.zeros(1 << bits, dtype=np.uint64)
    vals = -np.ones(1 << bits, dtype=np.int64)
    px = np.empty(1 << (bits - 1), dtype=np.int64)
    py = np.empty(1 << (bits - 1), dtype=np.int64)
    px[0] = x
    py[0] = y
    _tab_insert(keys, vals, bits, _pack(x, y), 0)
    n = 1
    j = 0
    status = 1
    if not (mode == FIXED and nfix == 0):
        n, j, status = _lerw_fill(px, py, n, j, keys, vals, bits, mode, r2, nfix, mask, mx0, my0, state, cap)
        while status == 0:
            bits += 1
            keys = np.zeros(1 << bits, dtype=np.uint64)
            vals = -np.ones(1 << bits, dtype=np.int64)
            nx = np.empty(1 << (bits - 1), dtype=np.int64)
            ny = np.empty(1 << (bits - 1), dtype=np.int64)
            nx[:n] = px[:n]
            ny[:n] = py[:n]
            px = nx
            py = ny
            for t in range(n):
                _tab_insert(keys, vals, bits, _pack(px[t], py[t]), t)
            n, j, status = _lerw_fill(px, py, n, j, keys, vals, bits, mode, r2, nfix, mask, mx0, my0, state, cap)
    out = np.empty((n, 2), dtype=np.int64)
    out[:, 0] = px[:n]
    out[:, 1] = py[:n]
    return out, j, status == 1


@njit(cache=True)
def _first_exit_index(path, l2):
    for i in range(path.shape[0]):
        if path[i, 0] * path[i, 0] + path[i, 1] * path[i, 1] > l2:
            return i
    return -1


def srw_until(start, stop: StopRule, rng, cap: int = DEFAULT_CAP) -> LatticePath:
    """Simple random walk [S_0, ..., S_T] where T is the first index >= 1 meeting ``stop``."""
    x, y = as_point(start)
    mode, r2, nfix, mask, mx0, my0 = stop.encode()
    arr, ok = _srw_kernel(x, y, mode, r2, nfix, mask, mx0, my0, state_of(rng), cap)
    path = LatticePath(arr, check=False)
    if not ok:
        raise CapExceeded(cap, path)
    return path


def loop_erase(path) -> LatticePath:
    """Chronological loop erasure [λ(s_0), ..., λ(s_n)] of a path.

    s_0 is the last visit to λ(0); each s_i is the last visit to λ(s_{i-1}+1).
    """
    v = path.array if isinstance(path, LatticePath) else np.asarray(path, dtype=np.int64)
    if len(v) == 0:
        raise ValueError("cannot loop-erase an empty path")
    last = {}
    for j, (x, y) in enumerate(v.tolist()):
        last[(x, y)] = j
    m = len(v) - 1
    idx = [last[tuple(v[0].tolist())]]
    while idx[-1] != m:
        idx.append(last[tuple(v[idx[-1] + 1].tolist())])
    tree = isinstance(path, LatticePath) and path.tree_path
    return LatticePath(v[idx], tree_path=tree, check=False)


@dataclass(frozen=True)
class LerwSample:
    path: LatticePath
    raw_steps: int
    truncation: Optional[tuple] = None

    @property
    def steps(self) -> int:
        return self.path.steps


def sample_lerw(start, stop: StopRule, rng, cap: int = DEFAULT_CAP) -> LerwSample:
    """Loop erasure of ``srw_until(start, stop, rng)``, computed on the fly.

    Consumes randomness exactly like :func:`srw_until`, so replaying the same
    stream through ``loop_erase(srw_until(...))`` reproduces the sample.
    """
    x, y = as_point(start)
    mode, r2, nfix, mask, mx0, my0 = stop.encode()
    arr, steps, ok = _lerw_kernel(x, y, mode, r2, nfix, mask, mx0, my0, state_of(rng), cap)
    if not ok:
        raise CapExceeded(cap, LatticePath(arr, check=False))
    return LerwSample(LatticePath(arr, check=False), int(steps))


def sample_infinite_lerw(l: int, truncation_factor: int = DEFAULT_TRUNCATION_FACTOR,
                         rng=0, cap: int = DEFAULT_CAP) -> LerwSample:
    """Approximate infinite LERW from 0 up to its first exit of B(0, l).

    Runs SRW to the exit of B(0, K l), loop-erases, and keeps the part of the
    erased path up to its first point outside B(0, l).
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    if truncation_factor < 2:
        raise ValueError("truncation factor must be >= 2")
    n = truncation_factor * l
    full = sample_lerw((0, 0), StopRule.exit_ball(n), rng, cap)
    k = int(_first_exit_index(full.path.array, l * l))
    return LerwSample(full.path[: k + 1], full.raw_steps, (l, n))


@njit(cache=True)
def _infinite_lerw_lengths(l, n, cap, states):
    """M̂_l for one sample per row of ``states`` (independent streams)."""
    out = np.empty(states.shape[0], dtype=np.int64)
    empty = np.zeros((1, 1), dtype=np.bool_)
    for s in range(states.shape[0]):
        path, steps, ok = _lerw_kernel(0, 0, EXIT_BALL, n * n, 0, empty, 0, 0, states[s], cap)
        if not ok:
            out[s] = -1
        else:
            out[s] = _first_exit_index(path, l * l)
    return out


def infinite_lerw_lengths(l: int, truncation_factor: int, sources, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Vectorised ``measure_lerw_lengths(sample_infinite_lerw(l, K, src))`` over ``sources``."""
    states = np.stack([state_of(s) for s in sources]) if len(sources) else np.zeros((0, 6), np.uint64)
    out = _infinite_lerw_lengths(int(l), int(truncation_factor * l), cap, states)
    if np.any(out < 0):
        raise CapExceeded(cap)
    return out


def measure_lerw_lengths(sample, subregion: Optional[LatticeRegion] = None) -> int:
    """Steps of the path, or the number of its vertices inside ``subregion``."""
    path = sample.path if isinstance(sample, LerwSample) else sample
    if subregion is None:
        return path.steps
    if isinstance(subregion, Ball):
        c = subregion.center
        a = path.array
        d2 = (a[:, 0] - c.x) ** 2 + (a[:, 1] - c.y) ** 2
        return int(np.count_nonzero(d2 <= subregion._r2))
    if isinstance(subregion, Box):
        a = path.array
        c = subregion.center
        inside = (np.abs(a[:, 0] - c.x) <= subregion.h) & (np.abs(a[:, 1] - c.y) <= subregion.h)
        return int(np.count_nonzero(inside))
    return sum(1 for p in path.points if p in subregion)
