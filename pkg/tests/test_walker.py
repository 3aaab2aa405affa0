from collections import Counter

import numpy as np
import pytest

from oracles import loop_erase_by_scan, total_variation
from ustlab.lattice import Ball, Box, LatticePath, PointSet, neighbors
from ustlab.oracle import dirichlet_expected_exit
from ustlab.rng import RandomSource
from ustlab.walker import (CapExceeded, StopRule, infinite_lerw_lengths, loop_erase,
                           measure_lerw_lengths, sample_infinite_lerw, sample_lerw, srw_until)

UNIT = {(1, 0), (0, 1), (-1, 0), (0, -1)}


@pytest.mark.parametrize("walk,expected", [
    ([(0, 0), (1, 0), (0, 0), (0, 1)], [(0, 0), (0, 1)]),
    ([(0, 0), (1, 0), (0, 0)], [(0, 0)]),
    ([(0, 0)], [(0, 0)]),
    ([(0, 0), (1, 0), (1, 1), (0, 1), (0, 0), (-1, 0)], [(0, 0), (-1, 0)]),
    ([(0, 0), (1, 0), (1, 1), (1, 0), (2, 0)], [(0, 0), (1, 0), (2, 0)]),
])
def test_loop_erase_examples(walk, expected):
    assert loop_erase(LatticePath(walk)).points == expected
    assert loop_erase_by_scan(walk) == expected


def test_self_avoiding_path_is_fixed():
    p = LatticePath([(0, 0), (1, 0), (1, 1), (2, 1), (2, 2)])
    assert loop_erase(p) == p


def test_loop_erase_matches_scan_oracle():
    for i in range(500):
        n = 1 + i % 200
        walk = srw_until((0, 0), StopRule.fixed(n), RandomSource(3).spawn(i))
        le = loop_erase(walk)
        assert le.points == loop_erase_by_scan(walk.points)
        assert le.is_self_avoiding()
        assert le.points[-1] == walk.points[-1]
        assert loop_erase(le) == le


def test_srw_trivial_stops():
    assert srw_until((0, 0), StopRule.fixed(0), 1).points == [(0, 0)]
    p = srw_until((0, 0), StopRule.exit_ball(0), 1)
    assert p.steps == 1 and tuple(p.points[-1]) in UNIT


def test_srw_steps_are_unit_vectors():
    for rule in (StopRule.exit_ball(7), StopRule.hit_region(Box(2, (5, 0))), StopRule.exit_region(Box(4)),
                 StopRule.fixed(300)):
        p = srw_until((0, 0), rule, 5, cap=10**6)
        assert {tuple(s) for s in np.diff(p.array, axis=0).tolist()} <= UNIT


def test_stop_times_start_at_one():
    # started inside the hit set, the walk does not stop at time 0
    p = srw_until((0, 0), StopRule.hit_region(PointSet([(0, 0)])), 9)
    assert p.steps >= 2 and tuple(p.points[-1]) == (0, 0)
    assert all(tuple(q) != (0, 0) for q in p.points[1:-1])


def test_exit_ball_endpoint():
    for i in range(50):
        s = sample_lerw((0, 0), StopRule.exit_ball(6), RandomSource(8).spawn(i))
        pts = s.path.array
        assert (pts[-1] ** 2).sum() > 36
        assert np.all((pts[:-1] ** 2).sum(axis=1) <= 36)


def test_cap_exceeded_carries_partial_path():
    with pytest.raises(CapExceeded) as exc:
        srw_until((0, 0), StopRule.exit_ball(1000), 1, cap=100)
    assert exc.value.partial.steps == 100


def test_lerw_replays_walk():
    # the on-the-fly erasure consumes the stream exactly like srw_until
    # hitting times of a point are heavy-tailed on Z^2, hence the small cap
    cap = 10**6
    for rule in (StopRule.exit_region(Box(1)), StopRule.exit_ball(12), StopRule.hit_point((2, 1))):
        for i in range(200):
            src = RandomSource(21).spawn(i)
            try:
                s = sample_lerw((0, 0), rule, src, cap=cap)
            except CapExceeded:
                with pytest.raises(CapExceeded):
                    srw_until((0, 0), rule, src, cap=cap)
                continue
            walk = srw_until((0, 0), rule, src, cap=cap)
            assert s.path == loop_erase(walk)
            assert s.raw_steps == walk.steps


def test_hit_neighbor_ends_with_last_step():
    done = 0
    for i in range(100):
        try:
            s = sample_lerw((0, 0), StopRule.hit_point((1, 0)), RandomSource(4).spawn(i), cap=10**6)
        except CapExceeded:
            continue
        done += 1
        assert s.path.is_self_avoiding()
        assert tuple(s.path.points[-1]) == (1, 0)
    assert done >= 50


def test_exit_time_mean_matches_dirichlet():
    exact = dirichlet_expected_exit(Ball((0, 0), 50), (0, 0))
    times = [srw_until((0, 0), StopRule.exit_ball(50), RandomSource(77).spawn(i)).steps
             for i in range(10_000)]
    assert abs(np.mean(times) / exact - 1) < 0.05


def test_infinite_lerw_basics():
    s = sample_infinite_lerw(1, 32, 3)
    assert s.steps >= 1 and s.truncation == (1, 32)
    a = sample_infinite_lerw(8, 8, RandomSource(5))
    b = sample_infinite_lerw(8, 8, RandomSource(5))
    assert a.path == b.path and a.raw_steps == b.raw_steps
    pts = a.path.array
    assert (pts[-1] ** 2).sum() > 64 and np.all((pts[:-1] ** 2).sum(axis=1) <= 64)
    with pytest.raises(ValueError):
        sample_infinite_lerw(0, 8)
    with pytest.raises(ValueError):
        sample_infinite_lerw(4, 1)


def test_vectorised_lengths_match_samples():
    srcs = [RandomSource(6).spawn(i) for i in range(40)]
    fast = infinite_lerw_lengths(10, 4, srcs)
    slow = [measure_lerw_lengths(sample_infinite_lerw(10, 4, s)) for s in srcs]
    assert fast.tolist() == slow
    assert np.all(infinite_lerw_lengths(1, 4, srcs) >= 1)


def test_measure_lengths():
    single = LatticePath([(0, 0)])
    assert measure_lerw_lengths(single) == 0
    p = LatticePath([(0, 0), (1, 0), (2, 0), (2, 1), (3, 1)])
    assert measure_lerw_lengths(p) == 4
    assert measure_lerw_lengths(p, Box(5)) == 5
    assert measure_lerw_lengths(p, Ball((0, 0), 2)) == 3
    assert measure_lerw_lengths(p, PointSet([(2, 0), (9, 9)])) == 1


def _coarse_law(l, K, n):
    """Exit sector (16 angular bins) and step count of infinite-LERW samples."""
    sector, length = Counter(), Counter()
    for i in range(n):
        path = sample_infinite_lerw(l, K, RandomSource(2024, K).spawn(i)).path.array
        x, y = path[-1]
        sector[int((np.arctan2(y, x) + np.pi) / (2 * np.pi) * 16) % 16] += 1
        length[min(len(path) - 1, 80) // 4] += 1
    return sector, length


def test_truncation_stability():
    s8, l8 = _coarse_law(8, 8, 10_000)
    s64, l64 = _coarse_law(8, 64, 10_000)
    assert total_variation(s8, s64) < 0.05
    assert total_variation(l8, l64) < 0.05
