"""Uniform spanning trees via Wilson's algorithm.

Two back ends share one idea: walk from the next vertex not yet in the tree,
remember only the last exit taken from each vertex, and when the walk hits
the tree retrace those exits.  Retracing last exits yields exactly the
chronological loop erasure of the walk, so each attachment is a LERW.

``FiniteGraph`` covers small explicit graphs.  Lattice boxes use an implicit
adjacency so multi-million vertex windows fit comfortably in memory.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Optional, Sequence

import numpy as np
from numba import njit

from .lattice import Ball, Box, LatticePath, LatticePoint, LatticeRegion, as_point
from .rng import RandomSource, next_direction, randbelow, state_of
from .walker import DEFAULT_CAP, EXIT_BALL, _lerw_kernel

DEFAULT_K = 8
DEFAULT_SPINE_FACTOR = 4


class GraphError(ValueError):
    pass


class DomainError(ValueError):
    """A point lies outside the sampled box."""


class StructuralError(ValueError):
    """Two points are not connected in the sampled forest."""


class FiniteGraph:
    """Undirected connected graph stored as CSR over vertex indices."""

    def __init__(self, vertices: Sequence[Hashable], edges):
        self.vertices = list(vertices)
        self.index = {v: i for i, v in enumerate(self.vertices)}
        if len(self.index) != len(self.vertices):
            raise GraphError("duplicate vertex labels")
        adj = [[] for _ in self.vertices]
        seen = set()
        for a, b in edges:
            i, j = self.index[a], self.index[b]
            if i == j:
                raise GraphError("self loops are not allowed")
            e = (min(i, j), max(i, j))
            if e in seen:
                continue
            seen.add(e)
            adj[i].append(j)
            adj[j].append(i)
        self.edges = sorted(seen)
        self.indptr = np.zeros(len(adj) + 1, dtype=np.int64)
        self.indptr[1:] = np.cumsum([len(a) for a in adj])
        self.indices = np.array([j for a in adj for j in a], dtype=np.int64)
        if not self._connected():
            raise GraphError("graph is not connected")

    @classmethod
    def from_adjacency(cls, adj: dict) -> "FiniteGraph":
        edges = [(u, v) for u, nbrs in adj.items() for v in nbrs]
        for u, nbrs in adj.items():
            for v in nbrs:
                if u not in adj.get(v, ()):
                    raise GraphError(f"adjacency is not symmetric at {u}-{v}")
        return cls(list(adj), edges)

    @classmethod
    def grid(cls, width: int, height: int) -> "FiniteGraph":
        """Grid graph on {0..width-1} x {0..height-1}, vertices as (x, y)."""
        verts = [(x, y) for y in range(height) for x in range(width)]
        edges = [((x, y), (x + 1, y)) for y in range(height) for x in range(width - 1)]
        edges += [((x, y), (x, y + 1)) for y in range(height - 1) for x in range(width)]
        return cls(verts, edges)

    def __len__(self):
        return len(self.vertices)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def _connected(self) -> bool:
        if not self.vertices:
            return False
        seen = np.zeros(len(self.vertices), dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            u = stack.pop()
            for v in self.neighbors(u):
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        return bool(seen.all())


@njit(cache=True)
def _wilson_csr(indptr, indices, root, order, state, nxt, parent, in_tree):
    in_tree[:] = False
    in_tree[root] = True
    parent[root] = root
    for v in order:
        u = v
        while not in_tree[u]:
            deg = indptr[u + 1] - indptr[u]
            nxt[u] = indices[indptr[u] + randbelow(state, deg)]
            u = nxt[u]
        u = v
        while not in_tree[u]:
            in_tree[u] = True
            parent[u] = nxt[u]
            u = nxt[u]


@njit(cache=True)
def _wilson_csr_batch(indptr, indices, root, order, states, out):
    n = indptr.shape[0] - 1
    nxt = np.empty(n, dtype=np.int64)
    in_tree = np.empty(n, dtype=np.bool_)
    for s in range(states.shape[0]):
        _wilson_csr(indptr, indices, root, order, states[s], nxt, out[s], in_tree)


def _prepare_order(graph: FiniteGraph, root, order):
    r = graph.index[root]
    if order is None:
        idx = np.arange(len(graph), dtype=np.int64)
    else:
        idx = np.array([graph.index[v] for v in order], dtype=np.int64)
        if sorted(idx.tolist()) != list(range(len(graph))):
            raise GraphError("order must enumerate every vertex exactly once")
    return r, idx


def wilson_finite(graph: FiniteGraph, root, order=None, rng=0) -> dict:
    """Uniform spanning tree of ``graph`` as a parent map (root maps to itself)."""
    r, idx = _prepare_order(graph, root, order)
    n = len(graph)
    parent = np.empty(n, dtype=np.int64)
    _wilson_csr(graph.indptr, graph.indices, r, idx, state_of(rng), np.empty(n, np.int64),
                parent, np.empty(n, np.bool_))
    return {graph.vertices[i]: graph.vertices[int(p)] for i, p in enumerate(parent)}


def wilson_finite_batch(graph: FiniteGraph, root, sources, order=None) -> np.ndarray:
    """Parent-index arrays for one tree per random source (rows)."""
    r, idx = _prepare_order(graph, root, order)
    states = np.stack([state_of(s) for s in sources])
    out = np.empty((len(sources), len(graph)), dtype=np.int64)
    _wilson_csr_batch(graph.indptr, graph.indices, r, idx, states, out)
    return out


def canonical_edges(parent_idx, graph: FiniteGraph) -> tuple:
    """Sorted tuple of sorted vertex-index pairs: the hashable tree key."""
    return tuple(sorted((min(i, int(p)), max(i, int(p)))
                        for i, p in enumerate(parent_idx) if int(p) != i))


@njit(cache=True)
def _graph_lerw(indptr, indices, v, w, state):
    """Loop-erased walk from v run until it hits w (at a time >= 1)."""
    n = indptr.shape[0] - 1
    pos = -np.ones(n, dtype=np.int64)
    path = np.empty(n, dtype=np.int64)
    path[0] = v
    pos[v] = 0
    k = 1
    u = v
    while True:
        deg = indptr[u + 1] - indptr[u]
        u = indices[indptr[u] + randbelow(state, deg)]
        if pos[u] >= 0:
            for t in range(pos[u] + 1, k):
                pos[path[t]] = -1
            k = pos[u] + 1
        else:
            path[k] = u
            pos[u] = k
            k += 1
        if u == w:
            return path[:k].copy()


def graph_lerw(graph: FiniteGraph, v, w, rng=0) -> list:
    """LERW on a finite graph from ``v`` stopped on hitting ``w``; list of labels."""
    p = _graph_lerw(graph.indptr, graph.indices, graph.index[v], graph.index[w], state_of(rng))
    return [graph.vertices[int(i)] for i in p]


def graph_lerw_batch(graph: FiniteGraph, v, w, sources) -> list:
    ip, ix = graph.indptr, graph.indices
    a, b = graph.index[v], graph.index[w]
    return [tuple(_graph_lerw(ip, ix, a, b, state_of(s)).tolist()) for s in sources]


# --- lattice boxes ---------------------------------------------------------

@njit(cache=True)
def _wilson_box(h, wired, state, parent, in_tree):
    """Wilson fill of the box [-h,h]^2 given vertices already in the tree.

    ``parent[v] == v`` marks roots.  With ``wired`` set a step out of the box
    lands on the collapsed boundary, which is always in the tree; without it
    steps out of the box are redrawn (free boundary).
    """
    L = 2 * h + 1
    n = L * L
    nxt = np.empty(n, dtype=np.int64)
    for v in range(n):
        u = v
        while not in_tree[u]:
            ux = u % L
            uy = u // L
            while True:
                d = next_direction(state)
                if d == 0:
                    nx, ny = ux + 1, uy
                elif d == 1:
                    nx, ny = ux, uy + 1
                elif d == 2:
                    nx, ny = ux - 1, uy
                else:
                    nx, ny = ux, uy - 1
                if 0 <= nx < L and 0 <= ny < L:
                    nxt[u] = ny * L + nx
                    break
                if wired:
                    nxt[u] = -1
                    break
            if nxt[u] < 0:
                break
            u = nxt[u]
        u = v
        while not in_tree[u]:
            in_tree[u] = True
            if nxt[u] < 0:
                parent[u] = u
                break
            parent[u] = nxt[u]
            u = nxt[u]


@njit(cache=True)
def _degrees(parent):
    deg = np.zeros(parent.shape[0], dtype=np.int64)
    for v in range(parent.shape[0]):
        p = parent[v]
        if p != v:
            deg[v] += 1
            deg[p] += 1
    return deg


@njit(cache=True)
def _csr_from_parent(parent, deg):
    n = parent.shape[0]
    indptr = np.zeros(n + 1, dtype=np.int64)
    for v in range(n):
        indptr[v + 1] = indptr[v] + deg[v]
    fill = indptr[:-1].copy()
    indices = np.empty(indptr[n], dtype=np.int64)
    for v in range(n):
        p = parent[v]
        if p != v:
            indices[fill[v]] = p
            fill[v] += 1
            indices[fill[p]] = v
            fill[p] += 1
    return indptr, indices


@dataclass(eq=False)
class TreeWindow:
    """A spanning forest of the box [-h, h]^2 in parent-pointer form.

    Vertex ``(x, y)`` has index ``(y + h) * (2h + 1) + (x + h)``.  Roots map to
    themselves; in wired samples every root is attached to the collapsed
    boundary.  ``trusted`` is the region whose law approximates the UST on Z^2.
    """

    h: int
    parent: np.ndarray
    root_kind: str
    trusted: LatticeRegion
    spine: Optional[LatticePath] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.parent = np.ascontiguousarray(self.parent, dtype=np.int64)
        self.L = 2 * self.h + 1
        if self.parent.shape != (self.L * self.L,):
            raise ValueError("parent array does not match box size")
        self.degrees = _degrees(self.parent)
        self._csr = None
        self._trusted_mask = None

    # geometry
    def index(self, p) -> int:
        x, y = int(p[0]), int(p[1])
        if abs(x) > self.h or abs(y) > self.h:
            raise DomainError(f"{(x, y)} is outside the sampled box of half-width {self.h}")
        return (y + self.h) * self.L + (x + self.h)

    def point(self, i: int) -> LatticePoint:
        return LatticePoint(int(i) % self.L - self.h, int(i) // self.L - self.h)

    def coords(self) -> np.ndarray:
        i = np.arange(self.L * self.L)
        return np.stack([i % self.L - self.h, i // self.L - self.h], axis=1)

    @property
    def box(self) -> Box:
        return Box(self.h)

    @property
    def n_vertices(self) -> int:
        return self.L * self.L

    def degree(self, p) -> int:
        return int(self.degrees[self.index(p)])

    def parent_of(self, p) -> LatticePoint:
        return self.point(self.parent[self.index(p)])

    def is_root(self, p) -> bool:
        i = self.index(p)
        return int(self.parent[i]) == i

    @property
    def csr(self):
        if self._csr is None:
            self._csr = _csr_from_parent(self.parent, self.degrees)
        return self._csr

    def tree_neighbors(self, p) -> list[LatticePoint]:
        indptr, indices = self.csr
        i = self.index(p)
        return [self.point(j) for j in indices[indptr[i]:indptr[i + 1]]]

    @property
    def trusted_mask(self) -> np.ndarray:
        if self._trusted_mask is None:
            c = self.coords()
            if isinstance(self.trusted, Ball):
                d2 = (c[:, 0] - self.trusted.center.x) ** 2 + (c[:, 1] - self.trusted.center.y) ** 2
                m = d2 <= self.trusted._r2
            elif isinstance(self.trusted, Box):
                t = self.trusted
                m = (np.abs(c[:, 0] - t.center.x) <= t.h) & (np.abs(c[:, 1] - t.center.y) <= t.h)
            else:
                m = np.array([tuple(p) in self.trusted for p in c.tolist()], dtype=bool)
            self._trusted_mask = m
        return self._trusted_mask

    def edges(self) -> list[tuple[LatticePoint, LatticePoint]]:
        return [(self.point(v), self.point(p)) for v, p in enumerate(self.parent) if p != v]

    def rootward(self, p) -> list[int]:
        """Vertex indices from ``p`` up to its root."""
        i = self.index(p)
        chain = [i]
        par = self.parent
        while par[i] != i:
            i = int(par[i])
            chain.append(i)
            if len(chain) > len(par):
                raise StructuralError("parent relation has a cycle")
        return chain

    def validate(self) -> None:
        """Acyclic parent relation with nearest-neighbour edges."""
        if _has_cycle(self.parent):
            raise StructuralError("parent relation has a cycle")
        c = self.coords()
        nonroot = self.parent != np.arange(len(self.parent))
        d = np.abs(c[nonroot] - c[self.parent[nonroot]]).sum(axis=1)
        if not np.all(d == 1):
            raise StructuralError("a tree edge joins non-adjacent lattice points")


@njit(cache=True)
def _has_cycle(parent):
    n = parent.shape[0]
    state = np.zeros(n, dtype=np.int8)  # 0 unseen, 1 on current chain, 2 done
    for v in range(n):
        u = v
        while state[u] == 0:
            state[u] = 1
            if parent[u] == u:
                break
            u = parent[u]
        if state[u] == 1 and parent[u] != u:
            return True
        u = v
        while state[u] == 1:
            state[u] = 2
            if parent[u] == u:
                break
            u = parent[u]
    return False


def sample_ust_box(h: int, rng=0, boundary: str = "wired", root=None,
                   trusted: Optional[LatticeRegion] = None) -> TreeWindow:
    """UST of the box [-h,h]^2 with wired or free boundary.

    Free boundary needs a root vertex (default the origin); the law of the
    resulting tree does not depend on that choice.
    """
    L = 2 * h + 1
    parent = np.arange(L * L, dtype=np.int64)
    in_tree = np.zeros(L * L, dtype=np.bool_)
    tw_root_kind = "wired-boundary"
    if boundary == "free":
        r = (0, 0) if root is None else root
        i = (int(r[1]) + h) * L + int(r[0]) + h
        in_tree[i] = True
        tw_root_kind = "finite-root"
    elif boundary != "wired":
        raise ValueError("boundary must be 'wired' or 'free'")
    _wilson_box(h, boundary == "wired", state_of(rng), parent, in_tree)
    return TreeWindow(h, parent, tw_root_kind, trusted if trusted is not None else Box(h),
                      meta={"method": boundary, "r": h, "K": 1})


def sample_ust_window(r: int, method: str = "wired", K: int = DEFAULT_K, rng=0,
                      spine_factor: int = DEFAULT_SPINE_FACTOR, cap: int = DEFAULT_CAP) -> TreeWindow:
    """Spanning forest of the box [-K r, K r]^2 whose restriction to B(0, r) is trusted.

    ``wired``: Wilson's algorithm rooted at the collapsed box boundary.
    ``spine``: an approximate infinite LERW from 0 (run to the exit of
    B(0, spine_factor * sqrt(2) K r), erased, cut at the first exit of the box)
    is laid down first and the remaining vertices are filled by Wilson.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    if K < 4:
        raise ValueError("K must be >= 4")
    h = K * r
    L = 2 * h + 1
    state = state_of(rng)
    parent = np.arange(L * L, dtype=np.int64)
    in_tree = np.zeros(L * L, dtype=np.bool_)
    spine = None
    if method in ("spine", "spine-and-fill"):
        method = "spine"
        radius = spine_factor * (math.isqrt(2 * h * h) + 1)
        empty = np.zeros((1, 1), dtype=np.bool_)
        path, _, ok = _lerw_kernel(0, 0, EXIT_BALL, radius * radius, 0, empty, 0, 0, state, cap)
        if not ok:
            from .walker import CapExceeded
            raise CapExceeded(cap)
        outside = np.nonzero((np.abs(path[:, 0]) > h) | (np.abs(path[:, 1]) > h))[0]
        path = path[: outside[0]]
        idx = (path[:, 1] + h) * L + (path[:, 0] + h)
        in_tree[idx] = True
        parent[idx[:-1]] = idx[1:]
        spine = LatticePath(path, check=False)
        root_kind = "infinite-lerw-spine"
    elif method == "wired":
        root_kind = "wired-boundary"
    else:
        raise ValueError("method must be 'wired' or 'spine'")
    _wilson_box(h, True, state, parent, in_tree)
    meta = {"r": r, "K": K, "method": method}
    if isinstance(rng, RandomSource):
        meta["seed"] = rng.seed
        meta["stream"] = rng.stream
    return TreeWindow(h, parent, root_kind, Ball((0, 0), r), spine=spine, meta=meta)


def path_tree(h: int, axis_len: Optional[int] = None) -> TreeWindow:
    """Forest whose only non-trivial component is the segment {(x,0): |x| <= axis_len}.

    A one-dimensional sanity anchor: walks from the origin see plain SRW on Z
    until they reach the segment ends.
    """
    a = h if axis_len is None else axis_len
    L = 2 * h + 1
    parent = np.arange(L * L, dtype=np.int64)
    row = h * L
    for x in range(-a, a):
        parent[row + x + h] = row + x + 1 + h
    return TreeWindow(h, parent, "finite-root", Box(h), meta={"method": "path", "r": a, "K": 1})


def tree_path(tree: TreeWindow, x, y) -> LatticePath:
    """Unique tree path from x to y; its number of steps is d(x, y)."""
    cx = tree.rootward(x)
    cy = tree.rootward(y)
    pos = {v: k for k, v in enumerate(cx)}
    for k, v in enumerate(cy):
        if v in pos:
            idx = cx[: pos[v] + 1] + cy[:k][::-1]
            pts = [tree.point(i) for i in idx]
            return LatticePath(pts, tree_path=True, check=False)
    raise StructuralError(f"{tuple(x)} and {tuple(y)} lie in different components")


def meeting_point(tree: TreeWindow, x, y) -> LatticePoint:
    """First common vertex of the rootward chains of x and y."""
    cx = set(tree.rootward(x))
    for v in tree.rootward(y):
        if v in cx:
            return tree.point(v)
    raise StructuralError(f"{tuple(x)} and {tuple(y)} lie in different components")


def tree_distance(tree: TreeWindow, x, y) -> int:
    return tree_path(tree, x, y).steps


# --- text format -------------------------------------------------------------

def dump_tree(tree: TreeWindow) -> str:
    m = tree.meta
    lines = [f"ust-window v1 r={m.get('r', tree.h)} K={m.get('K', 1)} "
             f"method={m.get('method', 'wired')} seed={m.get('seed', 0)}"]
    c = tree.coords()
    pc = c[tree.parent]
    for (x, y), (px, py) in zip(c.tolist(), pc.tolist()):
        lines.append(f"{x} {y} {px} {py}")
    return "\n".join(lines) + "\n"


def load_tree(text: str) -> TreeWindow:
    head, *rows = [ln for ln in text.splitlines() if ln.strip()]
    fields = head.split()
    if fields[:2] != ["ust-window", "v1"]:
        raise ValueError("not a ust-window v1 file")
    meta = dict(f.split("=", 1) for f in fields[2:])
    r, K = int(meta["r"]), int(meta["K"])
    data = np.array([list(map(int, ln.split())) for ln in rows], dtype=np.int64)
    h = int(np.abs(data[:, :2]).max())
    L = 2 * h + 1
    if len(data) != L * L:
        raise ValueError("tree file does not cover a full box")
    idx = (data[:, 1] + h) * L + (data[:, 0] + h)
    pidx = (data[:, 3] + h) * L + (data[:, 2] + h)
    parent = np.empty(L * L, dtype=np.int64)
    parent[idx] = pidx
    method = meta["method"]
    trusted = Ball((0, 0), r) if method in ("wired", "spine") else Box(h)
    kind = {"wired": "wired-boundary", "spine": "infinite-lerw-spine"}.get(method, "finite-root")
    tmeta = {"r": r, "K": K, "method": method, "seed": int(meta["seed"])}
    return TreeWindow(h, parent, kind, trusted, meta=tmeta)
