"""Simple random walk on sampled trees and its observables.

From x the walk moves to a uniformly chosen tree neighbour.  Walks that wander
out of the trusted window are discarded and counted; an estimate built from
more than 1% discarded replicas is flagged invalid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit

from .lattice import LatticePath, LatticePoint
from .metrics import bfs_distances
from .parallel import map_ordered
from .rng import RandomSource, randbelow, state_of
from .ust import DomainError, TreeWindow, sample_ust_window

HORIZON, TAU_R, TAU_EUCLID, WINDOW_EDGE = 0, 1, 2, 3
STOP_NAMES = {HORIZON: "horizon", TAU_R: "tau_R", TAU_EUCLID: "tau_r", WINDOW_EDGE: "window edge"}
MAX_DISCARD = 0.01
LOST_MASS_TOL = 1e-3  # escaped probability mass above which an exact run counts as discarded
DEFAULT_WALK_CAP = 10**9


@dataclass
class WalkTrace:
    start: LatticePoint
    positions: LatticePath
    steps: int
    stop_reason: str


@dataclass
class HeatKernelEstimate:
    n: int
    x: LatticePoint
    y: LatticePoint
    p: float
    stderr: float
    kind: str
    p_tilde: float = math.nan
    p_tilde_stderr: float = math.nan
    valid: bool = True
    discard_rate: float = 0.0


@dataclass(frozen=True)
class TreeEnsemble:
    """Independent windowed USTs; tree i uses stream ``RandomSource(seed).spawn(i)``."""

    r: int
    K: int = 4
    method: str = "wired"
    n_trees: int = 100
    seed: int = 0

    def tree(self, i: int) -> TreeWindow:
        return sample_ust_window(self.r, self.method, self.K, RandomSource(self.seed).spawn(i))

    def __len__(self):
        return self.n_trees


class FixedTrees:
    """A given list of trees posing as an ensemble (quenched runs, synthetic trees)."""

    def __init__(self, trees: Sequence[TreeWindow]):
        self.trees = list(trees)
        self.n_trees = len(self.trees)

    def tree(self, i: int) -> TreeWindow:
        return self.trees[i]

    def __len__(self):
        return self.n_trees


def as_ensemble(trees, mode: str = "annealed"):
    if isinstance(trees, TreeWindow):
        ens = FixedTrees([trees])
    elif isinstance(trees, (TreeEnsemble, FixedTrees)):
        ens = trees
    else:
        ens = FixedTrees(trees)
    if mode == "quenched":
        return FixedTrees([ens.tree(0)])
    if mode != "annealed":
        raise ValueError("mode must be 'annealed' or 'quenched'")
    return ens


# --- kernels -----------------------------------------------------------------

@njit(cache=True, inline="always")
def _step(indptr, indices, v, state):
    deg = indptr[v + 1] - indptr[v]
    return indices[indptr[v] + randbelow(state, deg)]


@njit(cache=True)
def _run_walk(indptr, indices, dist, euc2, trusted, s, horizon, R, r2, state):
    n_alloc = min(horizon + 1, 1 << 16)
    buf = np.empty(n_alloc, dtype=np.int64)
    buf[0] = s
    v = s
    t = 0
    reason = HORIZON
    while t < horizon:
        if indptr[v + 1] == indptr[v]:
            break
        v = _step(indptr, indices, v, state)
        t += 1
        if t >= buf.shape[0]:
            nb = np.empty(2 * buf.shape[0], dtype=np.int64)
            nb[: buf.shape[0]] = buf
            buf = nb
        buf[t] = v
        if not trusted[v]:
            reason = WINDOW_EDGE
            break
        if R >= 0 and dist[v] > R:
            reason = TAU_R
            break
        if r2 >= 0 and euc2[v] > r2:
            reason = TAU_EUCLID
            break
    return buf[: t + 1].copy(), reason


@njit(cache=True)
def _walk_batch(indptr, indices, dist, euc2, trusted, s, horizon, Rs, r2s, obs, states,
                tau_R, tau_r, at_start, d_obs, y_obs, w_obs, aborted):
    """Run one walk per row of ``states``.

    Records, per walk: the first time d(s, X) exceeds each entry of ``Rs``;
    the first time |X - s|^2 exceeds each entry of ``r2s``; and at every time
    in ``obs`` the indicator X_t == s, d(s, X_t), the running maximum of the
    distance and the number of distinct visited vertices.  A walk stops at the
    horizon or once every radius has been exited.
    """
    n = indptr.shape[0] - 1
    stamp = np.zeros(n, dtype=np.int64)
    nR = Rs.shape[0]
    nr = r2s.shape[0]
    nobs = obs.shape[0]
    for w in range(states.shape[0]):
        state = states[w]
        gen = w + 1
        v = s
        stamp[v] = gen
        visited = 1
        ymax = 0
        iR = 0
        ir = 0
        io = 0
        t = 0
        aborted[w] = False
        tau_R[w, :] = -1
        tau_r[w, :] = -1
        while io < nobs and obs[io] == 0:
            at_start[w, io] = True
            d_obs[w, io] = 0
            y_obs[w, io] = 0
            w_obs[w, io] = 1
            io += 1
        while t < horizon and (io < nobs or iR < nR or ir < nr):
            if indptr[v + 1] == indptr[v]:
                # isolated start: the walk cannot move
                break
            v = _step(indptr, indices, v, state)
            t += 1
            if not trusted[v]:
                aborted[w] = True
                break
            dv = dist[v]
            if dv > ymax:
                ymax = dv
            if stamp[v] != gen:
                stamp[v] = gen
                visited += 1
            while iR < nR and dv > Rs[iR]:
                tau_R[w, iR] = t
                iR += 1
            while ir < nr and euc2[v] > r2s[ir]:
                tau_r[w, ir] = t
                ir += 1
            while io < nobs and obs[io] == t:
                at_start[w, io] = v == s
                d_obs[w, io] = dv
                y_obs[w, io] = ymax
                w_obs[w, io] = visited
                io += 1


@njit(cache=True)
def _propagate(indptr, indices, deg, order, dist, s_local, tmax, out_diag):
    """Exact walk law from order[s_local], restricted to the vertices in ``order``.

    ``order`` is sorted by distance from the start, so at time t only the prefix
    with dist <= t can carry mass.  Mass stepping outside ``order`` is dropped
    and accumulated in the returned ``lost``.  Writes P(X_t = start) into
    out_diag[t] and returns (final two distributions, lost).
    """
    m = order.shape[0]
    n = indptr.shape[0] - 1
    local = -np.ones(n, dtype=np.int64)
    for k in range(m):
        local[order[k]] = k
    cur = np.zeros(m)
    nxt = np.zeros(m)
    prev = np.zeros(m)
    cur[s_local] = 1.0
    out_diag[0] = 1.0
    lost = 0.0
    active = 1
    for t in range(1, tmax + 1):
        while active < m and dist[active] <= t:
            active += 1
        for k in range(active):
            nxt[k] = 0.0
        for k in range(active):
            pk = cur[k]
            if pk == 0.0:
                continue
            v = order[k]
            share = pk / deg[v]
            for e in range(indptr[v], indptr[v + 1]):
                j = local[indices[e]]
                if j >= 0:
                    nxt[j] += share
                else:
                    lost += share
        for k in range(active):
            prev[k] = cur[k]
            cur[k] = nxt[k]
        out_diag[t] = cur[s_local]
    return prev, cur, lost


# --- single walks ---------------------------------------------------------------

def _fields(tree: TreeWindow, start):
    s = tree.index(start)
    dist = -np.ones(tree.n_vertices, dtype=np.int64)
    order, d, _ = bfs_distances(tree, start)
    dist[order] = d
    c = tree.coords()
    sp_ = tree.point(s)
    euc2 = (c[:, 0] - sp_.x) ** 2 + (c[:, 1] - sp_.y) ** 2
    return s, dist, euc2


def run_walk(tree: TreeWindow, start, horizon: int, R: Optional[int] = None,
             r: Optional[float] = None, rng=0) -> WalkTrace:
    """Walk from ``start`` until the horizon, τ_R (d > R) or τ̃_r (|X - start| > r)."""
    s = tree.index(start)
    if not tree.trusted_mask[s]:
        raise DomainError(f"start {tuple(start)} is outside the trusted window")
    s, dist, euc2 = _fields(tree, start)
    R_ = -1 if R is None else int(R)
    r2 = -1 if r is None else int(math.floor(r * r))
    idx, reason = _run_walk(*tree.csr, dist, euc2, tree.trusted_mask, s, int(horizon), R_, r2,
                            state_of(rng))
    pts = np.stack([idx % tree.L - tree.h, idx // tree.L - tree.h], axis=1)
    return WalkTrace(tree.point(s), LatticePath(pts, tree_path=True, check=False),
                     len(idx) - 1, STOP_NAMES[int(reason)])


@dataclass
class _WalkTask:
    ensemble: object
    walks: int
    seed: int
    stream: int
    horizon: int
    Rs: np.ndarray
    r2s: np.ndarray
    obs: np.ndarray
    start: tuple = (0, 0)


def _walk_tree(task: _WalkTask, i: int) -> dict:
    tree = task.ensemble.tree(i)
    s, dist, euc2 = _fields(tree, task.start)
    base = RandomSource(task.seed, task.stream).spawn(i)
    states = np.stack([base.spawn(j).state() for j in range(task.walks)])
    W = task.walks
    out = dict(
        tau_R=np.empty((W, len(task.Rs)), np.int64),
        tau_r=np.empty((W, len(task.r2s)), np.int64),
        at_start=np.zeros((W, len(task.obs)), np.bool_),
        d=np.zeros((W, len(task.obs)), np.int64),
        y=np.zeros((W, len(task.obs)), np.int64),
        w=np.zeros((W, len(task.obs)), np.int64),
        aborted=np.zeros(W, np.bool_),
    )
    _walk_batch(*tree.csr, dist, euc2, tree.trusted_mask, s, task.horizon, task.Rs, task.r2s,
                task.obs, states, out["tau_R"], out["tau_r"], out["at_start"], out["d"],
                out["y"], out["w"], out["aborted"])
    out["mu"] = int(tree.degrees[s])
    return out


def _run_ensemble(task: _WalkTask, workers=None) -> list[dict]:
    return map_ordered(partial(_walk_tree, task), range(task.ensemble.n_trees), workers)


def _rng_pair(rng):
    if isinstance(rng, RandomSource):
        return rng.seed, rng.stream
    return int(rng), 0


def _annealed(values: list, keep: list, scale=None):
    """Mean and stderr: per-tree means (times ``scale``), then across trees.

    With a single tree the stderr comes from the walks.  If every walk was
    discarded the result is NaN.
    """
    scale = [1.0] * len(values) if scale is None else scale
    per_tree = [(v[k].astype(float), c) for v, k, c in zip(values, keep, scale) if k.any()]
    if not per_tree:
        shape = np.shape(values[0])[1:]
        return np.full(shape, np.nan), np.full(shape, np.nan)
    if len(per_tree) == 1:
        v, c = per_tree[0]
        err = v.std(axis=0, ddof=1) / math.sqrt(len(v)) if len(v) > 1 else np.full(v.shape[1:], np.nan)
        return v.mean(axis=0) * c, err * c
    m = np.array([v.mean(axis=0) * c for v, c in per_tree])
    return m.mean(axis=0), m.std(axis=0, ddof=1) / math.sqrt(len(m))


# --- estimators -----------------------------------------------------------------

def estimate_return_probability(trees, n_values, replicas: int = 100, rng=0, method: str = "walks",
                                mode: str = "annealed", workers=None, cut_radius: Optional[int] = None
                                ) -> list[HeatKernelEstimate]:
    """p_{2n}(0,0) and p̃_{2n}(0,0) = p_{2n} + p_{2n+1} for each n in ``n_values``.

    ``method='walks'``: indicator Monte Carlo over ``replicas`` walks per tree.
    ``method='exact'``: the quenched kernel of each tree by exact propagation on
    the largest intrinsic ball inside the trusted window (or ``cut_radius``),
    then averaged over trees.
    """
    ens = as_ensemble(trees, mode)
    n_values = [int(n) for n in n_values]
    times = sorted({t for n in n_values for t in (2 * n, 2 * n + 1)})
    seed, stream = _rng_pair(rng)
    if method == "walks":
        task = _WalkTask(ens, replicas, seed, stream, max(times), np.zeros(0, np.int64),
                         np.zeros(0, np.int64), np.array(times, np.int64))
        res = _run_ensemble(task, workers)
        keep = [~r["aborted"] for r in res]
        discard = 1 - sum(k.sum() for k in keep) / sum(len(k) for k in keep)
        vals = [r["at_start"] for r in res]
        scale = [1.0 / r["mu"] for r in res]
        mean, err = _annealed(vals, keep, scale)
        tvals = [v[:, [times.index(2 * n) for n in n_values]].astype(np.int64)
                 + v[:, [times.index(2 * n + 1) for n in n_values]] for v in vals]
        tmean, terr = _annealed(tvals, keep, scale)
        kind = "monte-carlo"
    elif method == "exact":
        per_tree = map_ordered(partial(_exact_return_tree, ens, max(times), cut_radius),
                               range(ens.n_trees), workers)
        diag = np.array([p for p, _ in per_tree])
        lost = np.array([l for _, l in per_tree])
        discard = float(np.mean(lost > LOST_MASS_TOL))
        arr = diag[:, times]
        mean = arr.mean(axis=0)
        err = arr.std(axis=0, ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else np.zeros(len(times))
        tarr = diag[:, [2 * n for n in n_values]] + diag[:, [2 * n + 1 for n in n_values]]
        tmean = tarr.mean(axis=0)
        terr = tarr.std(axis=0, ddof=1) / math.sqrt(len(tarr)) if len(tarr) > 1 else np.zeros(len(n_values))
        kind = "exact" if len(arr) == 1 else "exact-annealed"
    else:
        raise ValueError("method must be 'walks' or 'exact'")
    out = []
    origin = LatticePoint(0, 0)
    for k, n in enumerate(n_values):
        i = times.index(2 * n)
        out.append(HeatKernelEstimate(n, origin, origin, float(mean[i]), float(np.nan_to_num(err[i])), kind,
                                      float(tmean[k]), float(np.nan_to_num(terr[k])),
                                      valid=bool(discard <= MAX_DISCARD), discard_rate=float(discard)))
    return out


def _exact_return_tree(ens, tmax, cut_radius, i):
    tree = ens.tree(i)
    diag, lost = exact_return_curve(tree, tmax, cut_radius=cut_radius)
    mu0 = tree.degrees[tree.index((0, 0))]
    return diag / mu0, lost


def exact_return_curve(tree: TreeWindow, tmax: int, start=(0, 0), cut_radius: Optional[int] = None):
    """P(X_t = start) for t = 0..tmax by exact propagation; returns (curve, lost mass)."""
    order, dist, _ = bfs_distances(tree, start)
    outside = ~tree.trusted_mask[order]
    limit = int(dist[outside].min()) - 1 if outside.any() else int(dist.max())
    if cut_radius is not None:
        limit = min(limit, int(cut_radius))
    keep = dist <= limit
    order, dist = order[keep], dist[keep]
    curve = np.zeros(tmax + 1)
    indptr, indices = tree.csr
    _, _, lost = _propagate(indptr, indices, tree.degrees, order, dist, 0, int(tmax), curve)
    return curve, float(lost)


def exact_walk_law(tree: TreeWindow, T: int, start=(0, 0), cut_radius: Optional[int] = None):
    """(vertex indices, P(X_T = v), P(X_{T+1} = v), distances, lost mass) by exact propagation."""
    order, dist, _ = bfs_distances(tree, start)
    outside = ~tree.trusted_mask[order]
    limit = int(dist[outside].min()) - 1 if outside.any() else int(dist.max())
    if cut_radius is not None:
        limit = min(limit, int(cut_radius))
    keep = dist <= limit
    order, dist = order[keep], dist[keep]
    curve = np.zeros(T + 2)
    indptr, indices = tree.csr
    pT, pT1, lost = _propagate(indptr, indices, tree.degrees, order, dist, 0, int(T) + 1, curve)
    return order, pT, pT1, dist, float(lost)


def exit_time_statistics(trees, radii, replicas: int = 50, rng=0, kind: str = "intrinsic",
                         mode: str = "annealed", workers=None, cap: int = DEFAULT_WALK_CAP):
    """Rows (radius, mean exit time, stderr, discard rate) for τ_R or τ̃_r.

    One walk per replica runs until it has left every radius, so the recorded
    exit times are pathwise nondecreasing in the radius.
    """
    ens = as_ensemble(trees, mode)
    radii = np.array(sorted(radii), dtype=np.int64)
    seed, stream = _rng_pair(rng)
    if kind == "intrinsic":
        Rs, r2s = radii, np.zeros(0, np.int64)
    elif kind == "euclidean":
        Rs, r2s = np.zeros(0, np.int64), radii * radii
    else:
        raise ValueError("kind must be 'intrinsic' or 'euclidean'")
    task = _WalkTask(ens, replicas, seed, stream, cap, Rs, r2s, np.zeros(0, np.int64))
    res = _run_ensemble(task, workers)
    key = "tau_R" if kind == "intrinsic" else "tau_r"
    keep = [~r["aborted"] & np.all(r[key] >= 0, axis=1) for r in res]
    total = sum(len(k) for k in keep)
    discard = 1 - sum(k.sum() for k in keep) / total
    mean, err = _annealed([r[key] for r in res], keep)
    return [(int(R), float(m), float(e), float(discard)) for R, m, e in zip(radii, mean, err)]


def displacement_and_range(trees, n_values, replicas: int = 50, rng=0, mode: str = "annealed",
                           workers=None):
    """Rows (n, E d(0,X_n), E Y_n, E|W_n|, stderrs..., discard rate)."""
    ens = as_ensemble(trees, mode)
    obs = np.array(sorted(set(int(n) for n in n_values)), dtype=np.int64)
    seed, stream = _rng_pair(rng)
    task = _WalkTask(ens, replicas, seed, stream, int(obs.max()), np.zeros(0, np.int64),
                     np.zeros(0, np.int64), obs)
    res = _run_ensemble(task, workers)
    keep = [~r["aborted"] for r in res]
    discard = 1 - sum(k.sum() for k in keep) / sum(len(k) for k in keep)
    rows = []
    stats = {k: _annealed([r[k] for r in res], keep) for k in ("d", "y", "w")}
    for i, n in enumerate(obs):
        rows.append(dict(n=int(n),
                         d=float(stats["d"][0][i]), d_err=float(stats["d"][1][i]),
                         Y=float(stats["y"][0][i]), Y_err=float(stats["y"][1][i]),
                         W=float(stats["w"][0][i]), W_err=float(stats["w"][1][i]),
                         discard_rate=float(discard)))
    return rows


def expected_exit_time_exact(tree: TreeWindow, R: int, start=(0, 0)) -> float:
    """E^start τ_R on one tree by a sparse linear solve over B_d(start, R)."""
    order, dist, _ = bfs_distances(tree, start, R)
    pos = -np.ones(tree.n_vertices, dtype=np.int64)
    pos[order] = np.arange(len(order))
    indptr, indices = tree.csr
    rows, cols, vals = [], [], []
    for k, v in enumerate(order):
        rows.append(k)
        cols.append(k)
        vals.append(1.0)
        nb = indices[indptr[v]:indptr[v + 1]]
        for u in nb:
            j = pos[u]
            if j >= 0:
                rows.append(k)
                cols.append(int(j))
                vals.append(-1.0 / len(nb))
    M = sp.csc_matrix((vals, (rows, cols)), shape=(len(order), len(order)))
    return float(spla.spsolve(M, np.ones(len(order)))[0])


def sub_gaussian_profile(tree: TreeWindow, T: int, bins, G: Callable[[float], float],
                         replicas: int = 0, rng=0):
    """Mean p̃_T(0, y) binned by d(0, y), with Φ(T, 0, y) = d / G(sqrt(T / d)).

    ``bins`` are bin edges on the intrinsic distance (left-closed).  With
    ``replicas == 0`` the kernel is exact; otherwise it is estimated from the
    endpoints of that many walks.
    """
    bins = np.asarray(bins, dtype=float)
    if replicas == 0:
        order, pT, pT1, dist, _ = exact_walk_law(tree, T)
        mu = tree.degrees[order].astype(float)
        ptilde = (pT + pT1) / mu
        perr = np.zeros_like(ptilde)
    else:
        s, dfield, euc2 = _fields(tree, (0, 0))
        base = RandomSource(*_rng_pair(rng))
        counts_T = np.zeros(tree.n_vertices)
        counts_T1 = np.zeros(tree.n_vertices)
        for j in range(replicas):
            idx, _ = _run_walk(*tree.csr, dfield, euc2, tree.trusted_mask, s, T + 1, -1, -1,
                               base.spawn(j).state())
            if len(idx) == T + 2:
                counts_T[idx[T]] += 1
                counts_T1[idx[T + 1]] += 1
        order = np.nonzero(dfield >= 0)[0]
        dist = dfield[order]
        mu = tree.degrees[order].astype(float)
        ptilde = (counts_T[order] + counts_T1[order]) / replicas / mu
        perr = np.sqrt((counts_T[order] + counts_T1[order])) / replicas / mu
    rows = []
    for lo, hi in zip(bins[:-1], bins[1:]):
        sel = (dist >= lo) & (dist < hi)
        if not sel.any():
            continue
        d = dist[sel].astype(float)
        phi = np.where(d > 0, d / np.array([G(math.sqrt(T / x)) if x > 0 else 1.0 for x in d]), 0.0)
        vals = ptilde[sel]
        rows.append(dict(d_lo=float(lo), d_hi=float(hi), d_mean=float(d.mean()),
                         phi=float(phi.mean()), p_tilde=float(vals.mean()),
                         stderr=float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0,
                         count=int(sel.sum())))
    return rows
