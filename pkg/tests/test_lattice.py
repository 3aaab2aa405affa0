import math

import numpy as np
import pytest

from ustlab.lattice import (Ball, Box, LatticePath, LatticePoint, PointSet, as_point, dump_path,
                            euclidean_ball, inner_boundary, load_path, neighbors, outer_boundary)


@pytest.mark.parametrize("p,expected", [
    ((0, 0), [(1, 0), (0, 1), (-1, 0), (0, -1)]),
    ((2, -1), [(3, -1), (2, 0), (1, -1), (2, -2)]),
])
def test_neighbors_order(p, expected):
    assert neighbors(p) == expected
    assert len(set(neighbors(p))) == 4


def test_coordinate_range():
    as_point((2**30, -(2**30)))
    with pytest.raises(ValueError):
        as_point((2**30 + 1, 0))


@pytest.mark.parametrize("r,size", [(0, 1), (1, 5), (2, 13), (1.5, 9), (math.sqrt(2), 9)])
def test_ball_sizes(r, size):
    ball = euclidean_ball((0, 0), r)
    assert len(ball.points()) == size
    brute = [(x, y) for x in range(-3, 4) for y in range(-3, 4) if x * x + y * y <= r * r + 1e-12]
    assert set(ball.points()) == set(brute)


def test_ball_area_approximates_pi():
    n = len(euclidean_ball((0, 0), 100).points())
    assert abs(n / 100**2 - math.pi) < 0.05 * math.pi


def test_ball_monotone_and_lazy_matches_materialized():
    for r1, r2 in [(0, 1), (1.5, 2), (3, 7.2)]:
        assert set(euclidean_ball((1, -2), r1).points()) <= set(euclidean_ball((1, -2), r2).points())
    b = Ball((2, 1), 4.3)
    m = b.materialize()
    for x in range(-5, 9):
        for y in range(-5, 8):
            assert ((x, y) in b) == ((x, y) in m)


def test_boundaries():
    D = PointSet([(0, 0)])
    assert set(outer_boundary(D).points()) == set(neighbors((0, 0)))
    assert set(inner_boundary(D).points()) == {(0, 0)}
    unit = euclidean_ball((0, 0), 1)
    assert set(inner_boundary(unit).points()) == {(1, 0), (-1, 0), (0, 1), (0, -1)}
    box = Box(1)
    inner = set(inner_boundary(box).points())
    assert len(inner) == 8 and (0, 0) not in inner
    assert len(outer_boundary(box)) == 12
    empty = PointSet()
    assert len(outer_boundary(empty)) == 0 and len(inner_boundary(empty)) == 0


def test_path_validation_and_io():
    p = LatticePath([(0, 0), (1, 0), (1, 1)])
    assert p.steps == 2 and p.is_self_avoiding()
    assert load_path(dump_path(p)) == p
    with pytest.raises(ValueError):
        LatticePath([(0, 0), (1, 1)])
    with pytest.raises(ValueError):
        LatticePath(np.zeros((0, 2), dtype=np.int64))
    LatticePath([(0, 0), (2, 3)], tree_path=True, check=False)
    assert LatticePoint(3, 4).norm2() == 25
