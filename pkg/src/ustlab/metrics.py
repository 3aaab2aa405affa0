"""Intrinsic metric and electrical quantities on sampled trees."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Optional

import numpy as np
from numba import njit

from .lattice import Ball, LatticePoint
from .ust import DomainError, TreeWindow


class WindowTooSmall(RuntimeError):
    """The metric ball reaches past the trusted window."""


@njit(cache=True)
def _bfs(indptr, indices, src, max_depth, allowed):
    """Breadth-first order from src to depth max_depth (-1 for unlimited).

    Returns (order, dist, bfs_parent) where dist and bfs_parent are aligned with
    ``order``.  Only vertices with ``allowed[v]`` are entered.
    """
    n = indptr.shape[0] - 1
    seen = np.zeros(n, dtype=np.bool_)
    order = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.int64)
    par = np.empty(n, dtype=np.int64)
    order[0] = src
    dist[0] = 0
    par[0] = -1
    seen[src] = True
    head = 0
    tail = 1
    while head < tail:
        v = order[head]
        dv = dist[head]
        head += 1
        if max_depth >= 0 and dv >= max_depth:
            continue
        for k in range(indptr[v], indptr[v + 1]):
            u = indices[k]
            if not seen[u] and allowed[u]:
                seen[u] = True
                order[tail] = u
                dist[tail] = dv + 1
                par[tail] = head - 1
                tail += 1
    return order[:tail].copy(), dist[:tail].copy(), par[:tail].copy()


def bfs_distances(tree: TreeWindow, center, max_depth: int = -1):
    """(vertex indices, intrinsic distances, position of BFS parent) from ``center``."""
    indptr, indices = tree.csr
    allowed = np.ones(tree.n_vertices, dtype=np.bool_)
    return _bfs(indptr, indices, tree.index(center), int(max_depth), allowed)


def distance_field(tree: TreeWindow, center=(0, 0)) -> np.ndarray:
    """d(center, v) for every box vertex; -1 where v is in another component."""
    order, dist, _ = bfs_distances(tree, center)
    out = -np.ones(tree.n_vertices, dtype=np.int64)
    out[order] = dist
    return out


@dataclass
class MetricBall:
    center: LatticePoint
    R: int
    members: np.ndarray  # vertex indices
    distances: np.ndarray
    volume: int
    truncated: bool

    def points(self, tree: TreeWindow) -> set:
        return {tree.point(i) for i in self.members}

    def shell_sizes(self) -> np.ndarray:
        return np.bincount(self.distances, minlength=self.R + 1)


def intrinsic_ball(tree: TreeWindow, center, R: int) -> MetricBall:
    """B_d(center, R) within the sampled forest, flagged if it leaves the trusted window."""
    if R < 0:
        raise ValueError("radius must be nonnegative")
    order, dist, _ = bfs_distances(tree, center, R)
    truncated = not bool(np.all(tree.trusted_mask[order]))
    return MetricBall(LatticePoint(*map(int, center)), R, order, dist, len(order), truncated)


def volume_profile(tree: TreeWindow, radii, center=(0, 0)):
    """(volumes, truncated flags) of B_d(center, R) for every R in ``radii`` from one BFS."""
    radii = np.asarray(radii, dtype=np.int64)
    order, dist, _ = bfs_distances(tree, center, int(radii.max()))
    outside = ~tree.trusted_mask[order]
    first_out = int(dist[outside].min()) if outside.any() else np.iinfo(np.int64).max
    counts = np.bincount(dist, minlength=int(radii.max()) + 1).cumsum()
    return counts[radii], radii >= first_out


def component_in_box(tree: TreeWindow, r, center=(0, 0)) -> set:
    """U_r: the component of ``center`` in the tree restricted to B(0, r)."""
    if isinstance(tree.trusted, Ball) and r > tree.trusted.r:
        raise DomainError(f"r={r} exceeds the trusted window radius {tree.trusted.r}")
    if tree.h < math.floor(r) and not isinstance(tree.trusted, Ball):
        raise DomainError(f"r={r} exceeds the sampled box")
    c = tree.coords()
    allowed = (c[:, 0] ** 2 + c[:, 1] ** 2) <= math.floor(Fraction(r) ** 2)
    indptr, indices = tree.csr
    order, _, _ = _bfs(indptr, indices, tree.index(center), -1, allowed)
    return {tree.point(i) for i in order}


@dataclass
class ResistanceQuery:
    source: LatticePoint
    target: frozenset
    value: float


@njit(cache=True)
def _tree_resistance(order, par, is_target):
    """Resistance from order[0] to the marked vertices by series/parallel reduction.

    ``order`` is a BFS order of the source's component and ``par`` gives the
    position of each vertex's BFS parent.  Subtrees that contain no target
    contribute no conductance.
    """
    m = order.shape[0]
    cond = np.zeros(m)  # summed conductance of child branches
    res = np.empty(m)
    for k in range(m - 1, -1, -1):
        v = order[k]
        if is_target[v]:
            res[k] = 0.0
        elif cond[k] > 0.0:
            res[k] = 1.0 / cond[k]
        else:
            res[k] = np.inf
        if k > 0 and res[k] < np.inf:
            cond[par[k]] += 1.0 / (1.0 + res[k])
    return res[0]


def _tree_resistance_exact(order, par, is_target) -> Fraction:
    m = len(order)
    cond = [Fraction(0)] * m
    res = [None] * m
    for k in range(m - 1, -1, -1):
        v = order[k]
        if is_target[v]:
            res[k] = Fraction(0)
        elif cond[k] > 0:
            res[k] = 1 / cond[k]
        if k > 0 and res[k] is not None:
            cond[par[k]] += 1 / (1 + res[k])
    return res[0]


def _target_mask(tree: TreeWindow, target) -> np.ndarray:
    if isinstance(target, np.ndarray) and target.dtype == np.bool_:
        return target
    mask = np.zeros(tree.n_vertices, dtype=np.bool_)
    for p in target:
        mask[tree.index(p)] = True
    return mask


def effective_resistance(tree: TreeWindow, source, target, exact: bool = False) -> ResistanceQuery:
    """R_eff(source, target) with unit resistors on the tree edges.

    ``target`` is an iterable of points or a boolean vertex mask.  An unreachable
    target gives ``inf``.  With ``exact`` the reduction runs in rational arithmetic.
    """
    mask = _target_mask(tree, target)
    if not mask.any():
        raise ValueError("target set is empty")
    s = tree.index(source)
    if mask[s]:
        raise ValueError("source belongs to the target set")
    order, _, par = bfs_distances(tree, source)
    if exact:
        v = _tree_resistance_exact(order, par, mask)
        value = math.inf if v is None else v
    else:
        value = float(_tree_resistance(order, par, mask))
    tset = frozenset(tree.point(i) for i in np.nonzero(mask)[0]) if mask.sum() < 10_000 else frozenset()
    return ResistanceQuery(LatticePoint(*map(int, source)), tset, value)


@njit(cache=True)
def _ball_complement_stats(order, dist, par, R):
    """Resistance to {d > R} and the Nash-Williams sum over sphere cut sets."""
    m = order.shape[0]
    is_target = np.zeros(m, dtype=np.bool_)
    reach = np.zeros(m, dtype=np.bool_)
    for k in range(m):
        if dist[k] > R:
            is_target[k] = True
    cond = np.zeros(m)
    res = np.empty(m)
    for k in range(m - 1, -1, -1):
        if is_target[k]:
            res[k] = 0.0
            reach[k] = True
        elif cond[k] > 0.0:
            res[k] = 1.0 / cond[k]
        else:
            res[k] = np.inf
        if k > 0:
            if res[k] < np.inf:
                cond[par[k]] += 1.0 / (1.0 + res[k])
            if reach[k]:
                reach[par[k]] = True
    gamma = np.zeros(R + 2, dtype=np.int64)
    for k in range(m):
        if reach[k] and dist[k] <= R:
            gamma[dist[k]] += 1
    nw = 0.0
    for j in range(1, R + 1):
        if gamma[j] > 0:
            nw += 1.0 / gamma[j]
    return res[0], nw, gamma


def resistance_to_ball_complement(tree: TreeWindow, R: int, center=(0, 0),
                                  with_bound: bool = False):
    """R_eff(center, B_d(center, R)^c); optionally also the Nash-Williams lower bound.

    The cut sets are the spheres Γ_k (k = 1..R) of vertices at distance k with a
    descendant beyond distance R.
    """
    order, dist, par = bfs_distances(tree, center, R + 1)
    inner = dist <= R
    if not np.all(tree.trusted_mask[order[inner]]):
        raise WindowTooSmall(f"B_d({tuple(center)}, {R}) is not inside the trusted window")
    value, nw, gamma = _ball_complement_stats(order, dist, par, R)
    q = ResistanceQuery(LatticePoint(*map(int, center)), frozenset(), float(value))
    if with_bound:
        return q, float(nw), gamma[1:R + 1]
    return q


@dataclass
class GoodBallReport:
    x: LatticePoint
    R: int
    lam: float
    volume: int
    resistance: float
    cond_volume_upper: bool
    cond_volume_lower: bool
    cond_resistance: bool

    @property
    def good(self) -> bool:
        return self.cond_volume_upper and self.cond_volume_lower and self.cond_resistance


def good_ball_check(tree: TreeWindow, x, R: int, lam: float, g: Callable[[float], float]) -> GoodBallReport:
    """Evaluate the three volume/resistance conditions that make R a good radius at x."""
    if lam < 1:
        raise ValueError("lambda must be >= 1")
    ball = intrinsic_ball(tree, x, R)
    if ball.truncated:
        raise WindowTooSmall(f"B_d({tuple(x)}, {R}) is not inside the trusted window")
    reff = resistance_to_ball_complement(tree, R, x).value
    g2 = float(g(R)) ** 2
    return GoodBallReport(
        LatticePoint(*map(int, x)), R, lam, ball.volume, reff,
        cond_volume_upper=ball.volume <= lam * g2,
        cond_volume_lower=g2 / lam <= ball.volume,
        cond_resistance=reff >= R / lam,
    )
