from fractions import Fraction

import numpy as np
import pytest

from oracles import tree_from_edges
from ustlab.lattice import Box, PointSet
from ustlab.oracle import (OracleCapExceeded, bareiss_determinant, count_spanning_trees,
                           dirichlet_expected_exit, enumerate_spanning_trees, exact_path_law,
                           laplacian_resistance, selftest, transition_powers)
from ustlab.rng import RandomSource
from ustlab.ust import FiniteGraph, sample_ust_box
from ustlab.walker import StopRule, srw_until


def path_graph(n):
    return FiniteGraph(list(range(n)), [(i, i + 1) for i in range(n - 1)])


@pytest.mark.parametrize("graph,count", [
    (FiniteGraph(["a", "b"], [("a", "b")]), 1),
    (FiniteGraph([0, 1, 2], [(0, 1), (1, 2), (0, 2)]), 3),
    (FiniteGraph.grid(2, 2), 4),
    (FiniteGraph.grid(3, 2), 15),
    (FiniteGraph.grid(3, 3), 192),
    (path_graph(6), 1),
])
def test_counts(graph, count):
    assert count_spanning_trees(graph) == count
    assert len(enumerate_spanning_trees(graph)) == count


def test_count_complete_graph_cayley():
    # K_n has n^(n-2) spanning trees
    for n in range(2, 8):
        verts = list(range(n))
        g = FiniteGraph(verts, [(i, j) for i in verts for j in verts if i < j])
        assert count_spanning_trees(g) == n ** (n - 2)


def test_bareiss():
    assert bareiss_determinant([[2, 1], [1, 2]]) == 3
    assert bareiss_determinant([[0, 1], [1, 0]]) == -1
    assert bareiss_determinant([[1, 2], [2, 4]]) == 0
    m = np.random.default_rng(0).integers(-5, 6, (6, 6))
    assert bareiss_determinant(m) == round(np.linalg.det(m))


def test_caps():
    with pytest.raises(OracleCapExceeded):
        enumerate_spanning_trees(FiniteGraph.grid(4, 4))
    with pytest.raises(OracleCapExceeded):
        count_spanning_trees(FiniteGraph.grid(5, 5))
    assert count_spanning_trees(FiniteGraph.grid(4, 4)) == 100352


def test_path_laws():
    assert exact_path_law(path_graph(4), 0, 3) == {(0, 1, 2, 3): Fraction(1)}
    tri = FiniteGraph([0, 1, 2], [(0, 1), (1, 2), (0, 2)])
    assert exact_path_law(tri, 0, 1) == {(0, 1): Fraction(2, 3), (0, 2, 1): Fraction(1, 3)}
    sq = FiniteGraph.grid(2, 2)
    law = exact_path_law(sq, (0, 0), (1, 0))
    a, b = sq.index[(0, 0)], sq.index[(1, 0)]
    assert law[(a, b)] == Fraction(3, 4)
    assert sum(law.values()) == 1 and len(law) == 2


def test_laplacian_resistance_examples():
    assert laplacian_resistance(FiniteGraph(["a", "b"], [("a", "b")]), ["a"], ["b"]) == pytest.approx(1)
    assert laplacian_resistance(path_graph(4), [0], [3]) == pytest.approx(3)
    assert laplacian_resistance(FiniteGraph.grid(2, 2), [(0, 0)], [(1, 1)]) == pytest.approx(1)
    # two parallel paths of lengths 1 and 2: (1*2)/(1+2)
    tri = FiniteGraph([0, 1, 2], [(0, 1), (1, 2), (0, 2)])
    assert laplacian_resistance(tri, [0], [1]) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        laplacian_resistance(tri, [0], [0])


def test_dirichlet_examples():
    assert dirichlet_expected_exit(PointSet([(0, 0)]), (0, 0)) == pytest.approx(1)
    seg = path_graph(101)
    assert dirichlet_expected_exit(seg, 50, absorbing=[0, 100]) == pytest.approx(2500)
    assert dirichlet_expected_exit(Box(3), (9, 9)) == 0


def test_dirichlet_matches_monte_carlo():
    exact = dirichlet_expected_exit(Box(5), (0, 0))
    t = np.array([srw_until((0, 0), StopRule.exit_region(Box(5)), RandomSource(5).spawn(i)).steps
                  for i in range(20_000)])
    assert abs(t.mean() - exact) < 3 * t.std(ddof=1) / np.sqrt(len(t))


def test_transition_powers():
    t = sample_ust_box(3, 4, boundary="free")
    mu = t.degrees.astype(float)
    K0, P0, live = transition_powers(t, 0)
    assert np.allclose(np.diag(K0), 1 / mu[live], atol=0, rtol=1e-15)
    assert np.count_nonzero(K0 - np.diag(np.diag(K0))) == 0
    for n in (1, 2, 7, 64, 255):
        K, P, live = transition_powers(t, n)
        m = mu[live]
        assert np.max(np.abs(P.sum(axis=1) - 1)) < 1e-12
        assert np.max(np.abs(m[:, None] * P - (m[:, None] * P).T)) < 1e-12
        assert np.max(np.abs(K - K.T)) < 1e-12
        if n % 2:
            assert np.all(np.diag(P) == 0)
    with pytest.raises(OracleCapExceeded):
        transition_powers(t, 2**14 + 1)
    with pytest.raises(OracleCapExceeded):
        transition_powers(sample_ust_box(8, 1, boundary="free"), 2)


def test_transition_powers_skip_isolated():
    t = tree_from_edges(2, [((0, 0), (1, 0)), ((1, 0), (1, 1))])
    K, P, live = transition_powers(t, 2)
    assert len(live) == 3
    assert K[0, 0] == pytest.approx(0.5)  # from (0,0): back after two steps w.p. 1/2, mu = 1


def test_selftest_passes():
    assert all(ok for _, ok in selftest())
