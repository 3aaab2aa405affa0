"""Exact ground truth on tiny instances.

Everything here is dense and deliberately naive: the point is to be obviously
correct, not fast.  Size caps are enforced.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import LatticeRegion, neighbors
from .ust import FiniteGraph, TreeWindow

ENUMERATION_CAP = 12
COUNT_CAP = 24
LINALG_CAP = 225
MAX_POWER = 2**14


class OracleCapExceeded(ValueError):
    pass


def _check(n, cap, what):
    if n > cap:
        raise OracleCapExceeded(f"{what} limited to {cap} vertices, got {n}")


def laplacian(graph: FiniteGraph) -> np.ndarray:
    n = len(graph)
    L = np.zeros((n, n), dtype=object)
    for i in range(n):
        L[i, i] = 0
    for i, j in graph.edges:
        L[i, j] -= 1
        L[j, i] -= 1
        L[i, i] += 1
        L[j, j] += 1
    return L


def bareiss_determinant(M) -> int:
    """Integer determinant by fraction-free Gaussian elimination."""
    A = [[int(v) for v in row] for row in M]
    n = len(A)
    if n == 0:
        return 1
    sign = 1
    prev = 1
    for k in range(n - 1):
        if A[k][k] == 0:
            for i in range(k + 1, n):
                if A[i][k] != 0:
                    A[k], A[i] = A[i], A[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                A[i][j] = (A[i][j] * A[k][k] - A[i][k] * A[k][j]) // prev
        prev = A[k][k]
    return sign * A[n - 1][n - 1]


def _is_spanning_tree(n, edges) -> bool:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges:
        a, b = find(i), find(j)
        if a == b:
            return False
        parent[a] = b
    return True


def enumerate_spanning_trees(graph: FiniteGraph) -> list[tuple]:
    """All spanning trees as sorted tuples of sorted vertex-index pairs."""
    n = len(graph)
    _check(n, ENUMERATION_CAP, "enumeration")
    return [tuple(c) for c in itertools.combinations(graph.edges, n - 1)
            if _is_spanning_tree(n, c)]


def count_spanning_trees(graph: FiniteGraph) -> int:
    """Matrix-tree count; cross-checked by enumeration below 12 vertices."""
    n = len(graph)
    _check(n, COUNT_CAP, "tree counting")
    count = bareiss_determinant(laplacian(graph)[1:, 1:])
    if n < ENUMERATION_CAP:
        brute = len(enumerate_spanning_trees(graph))
        if brute != count:
            raise AssertionError(f"determinant {count} disagrees with enumeration {brute}")
    return count


def _tree_path(n, edges, v, w):
    adj = defaultdict(list)
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    prev = {v: None}
    stack = [v]
    while stack:
        u = stack.pop()
        for x in adj[u]:
            if x not in prev:
                prev[x] = u
                stack.append(x)
    path = [w]
    while path[-1] != v:
        path.append(prev[path[-1]])
    return tuple(path[::-1])


def exact_path_law(graph: FiniteGraph, v, w) -> dict:
    """Law of the v-w path in a uniform spanning tree, keyed by vertex-index tuples."""
    trees = enumerate_spanning_trees(graph)
    a, b = graph.index[v], graph.index[w]
    law = defaultdict(Fraction)
    for t in trees:
        law[_tree_path(len(graph), t, a, b)] += Fraction(1, len(trees))
    return dict(law)


def laplacian_resistance(graph: FiniteGraph, A, B) -> float:
    """Effective resistance between vertex sets by a Dirichlet solve.

    The potential is 1 on A, 0 on B and harmonic elsewhere; the resistance is
    the reciprocal of its energy.
    """
    n = len(graph)
    _check(n, LINALG_CAP, "linear algebra")
    a = {graph.index[x] for x in A}
    b = {graph.index[x] for x in B}
    if not a or not b or a & b:
        raise ValueError("A and B must be disjoint and non-empty")
    L = laplacian(graph).astype(float)
    free = [i for i in range(n) if i not in a and i not in b]
    f = np.zeros(n)
    f[list(a)] = 1.0
    if free:
        rhs = -L[np.ix_(free, list(a))].sum(axis=1)
        try:
            f[free] = np.linalg.solve(L[np.ix_(free, free)], rhs)
        except np.linalg.LinAlgError:
            return math.inf
    energy = sum((f[i] - f[j]) ** 2 for i, j in graph.edges)
    return math.inf if energy == 0 else 1.0 / energy


def tree_graph(tree: TreeWindow, component_of=(0, 0)) -> tuple[FiniteGraph, list]:
    """The component of a TreeWindow containing ``component_of`` as a FiniteGraph."""
    indptr, indices = tree.csr
    start = tree.index(component_of)
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in indices[indptr[u]:indptr[u + 1]]:
            if int(v) not in seen:
                seen.add(int(v))
                stack.append(int(v))
    verts = sorted(seen)
    pts = [tree.point(i) for i in verts]
    edges = [(tree.point(v), tree.point(tree.parent[v])) for v in verts if tree.parent[v] != v]
    return FiniteGraph(pts, edges), pts


def dirichlet_expected_exit(domain, start, absorbing=None) -> float:
    """Expected exit time E[σ]: solves E = 1 + mean over neighbours, E = 0 outside.

    ``domain`` is a LatticeRegion (SRW on Z^2) or a FiniteGraph together with the
    set of ``absorbing`` vertices.
    """
    if isinstance(domain, LatticeRegion):
        pts = domain.points()
        if tuple(start) not in domain:
            return 0.0
        idx = {tuple(p): i for i, p in enumerate(pts)}
        rows, cols, vals = [], [], []
        for i, p in enumerate(pts):
            rows.append(i)
            cols.append(i)
            vals.append(1.0)
            for q in neighbors(p):
                j = idx.get(tuple(q))
                if j is not None:
                    rows.append(i)
                    cols.append(j)
                    vals.append(-0.25)
        M = sp.csr_matrix((vals, (rows, cols)), shape=(len(pts), len(pts)))
        sol = spla.spsolve(M.tocsc(), np.ones(len(pts)))
        return float(sol[idx[tuple(start)]])
    graph = domain
    n = len(graph)
    _check(n, LINALG_CAP, "linear algebra")
    dead = {graph.index[x] for x in (absorbing or ())}
    s = graph.index[start]
    if s in dead:
        return 0.0
    live = [i for i in range(n) if i not in dead]
    pos = {v: k for k, v in enumerate(live)}
    M = np.eye(len(live))
    for v in live:
        nb = graph.neighbors(v)
        for u in nb:
            if int(u) in pos:
                M[pos[v], pos[int(u)]] -= 1.0 / len(nb)
    sol = np.linalg.solve(M, np.ones(len(live)))
    return float(sol[pos[s]])


def transition_matrix(tree: TreeWindow):
    """SRW transition matrix over the non-isolated vertices of a small tree.

    Returns (P, mu, vertex indices).
    """
    live = np.nonzero(tree.degrees > 0)[0]
    _check(len(live), LINALG_CAP, "transition powers")
    pos = {int(v): k for k, v in enumerate(live)}
    indptr, indices = tree.csr
    P = np.zeros((len(live), len(live)))
    for v in live:
        nb = indices[indptr[v]:indptr[v + 1]]
        for u in nb:
            P[pos[int(v)], pos[int(u)]] = 1.0 / len(nb)
    return P, tree.degrees[live].astype(float), live


def transition_powers(tree: TreeWindow, n: int):
    """Heat kernel p_n(x, y) = P^x(X_n = y) / μ_y for all non-isolated x, y.

    Returns (kernel, P^n, vertex indices).
    """
    if not 0 <= n <= MAX_POWER:
        raise OracleCapExceeded(f"n must lie in [0, {MAX_POWER}]")
    P, mu, live = transition_matrix(tree)
    Pn = np.linalg.matrix_power(P, n)
    return Pn / mu[None, :], Pn, live


def selftest() -> list[tuple[str, bool]]:
    """Quick known-answer checks, one (name, passed) pair per case."""
    edge = FiniteGraph(["a", "b"], [("a", "b")])
    tri = FiniteGraph([0, 1, 2], [(0, 1), (1, 2), (0, 2)])
    c4 = FiniteGraph.grid(2, 2)
    g23 = FiniteGraph.grid(3, 2)
    p3 = FiniteGraph([0, 1, 2, 3], [(0, 1), (1, 2), (2, 3)])
    law = exact_path_law(tri, 0, 1)
    checks = [
        ("count single edge = 1", count_spanning_trees(edge) == 1),
        ("count 4-cycle = 4", count_spanning_trees(c4) == 4),
        ("count 2x3 grid = 15", count_spanning_trees(g23) == 15),
        ("enumerate triangle = 3", len(enumerate_spanning_trees(tri)) == 3),
        ("triangle path law 2/3, 1/3", law == {(0, 1): Fraction(2, 3), (0, 2, 1): Fraction(1, 3)}),
        ("resistance edge = 1", abs(laplacian_resistance(edge, ["a"], ["b"]) - 1) < 1e-12),
        ("resistance path = 3", abs(laplacian_resistance(p3, [0], [3]) - 3) < 1e-12),
        ("resistance 4-cycle opposite = 1",
         abs(laplacian_resistance(c4, [(0, 0)], [(1, 1)]) - 1) < 1e-12),
    ]
    return checks
