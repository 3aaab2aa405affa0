import math

import numpy as np
import pytest

from ustlab.estimators import (DimensionConfig, FitError, ScalingTable, build_scaling_set,
                               empirical_tail, estimate_G, estimate_dimensions, fit_exponent,
                               geometric_decay, isotonic_increasing, report_to_csv, tail_to_csv,
                               wilson_interval)
from ustlab.rng import RandomSource
from ustlab.ust import path_tree

GRID = np.geomspace(1, 1e5, 41)


def exact_table(n, values):
    n = np.asarray(n, dtype=float)
    return ScalingTable("exact", n, values, np.zeros(len(n)), np.full(len(n), 2))


def test_table_from_samples():
    t = ScalingTable.from_samples("x", [1, 2], [[1, 2, 3, 4], [2, 2, 2, 2]])
    assert t.mean.tolist() == [2.5, 2.0]
    assert t.stderr[0] == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert t.stderr[1] == 0
    assert t.to_csv().splitlines() == ["n,mean,stderr,samples", f"1,2.5,{float(t.stderr[0])!r},4", "2,2.0,0.0,4"]
    with pytest.raises(ValueError):
        ScalingTable.from_samples("x", [1], [[3]])


def test_isotonic_pav():
    assert isotonic_increasing([1, 3, 2, 4, 3.5, 5]).tolist() == [1, 2.5, 2.5, 3.75, 3.75, 5]
    assert isotonic_increasing([3, 2, 1]).tolist() == [2, 2, 2]
    assert isotonic_increasing([1, 2, 3]).tolist() == [1, 2, 3]
    assert isotonic_increasing([1, 3, 2], w=[1, 1, 3]).tolist() == [1, 2.25, 2.25]


def test_scaling_set_power_law():
    n = [2, 4, 8, 16, 32, 64, 128]
    S = build_scaling_set(exact_table(n, [x ** 1.25 for x in n]))
    assert S.G(1) == 1
    for t in GRID:
        assert S.G(t) == pytest.approx(t ** 1.25, rel=1e-9)
        assert S.g(S.G(t)) == pytest.approx(t, rel=1e-6)
        assert S.f(t) == pytest.approx(t ** (5 / 13), rel=1e-6)
        assert S.k(t) == pytest.approx(t ** (8 / 13), rel=1e-6)
        assert S.f(S.F(t)) == pytest.approx(t, rel=1e-6)
        assert 1 / S.k(t) == pytest.approx(S.f(t) / t, rel=1e-6)
        assert S.F(t) == pytest.approx(t * S.g(t) ** 2, rel=1e-9)


def test_scaling_set_from_noisy_table():
    n = np.array([2, 4, 8, 16, 32, 64])
    mean = n ** 1.25 * np.array([1.0, 1.02, 0.97, 1.01, 0.99, 1.0])
    mean[3] = mean[2] * 0.995  # local violation within noise
    table = ScalingTable("noisy", n, mean, 0.05 * mean, np.full(6, 100))
    S = build_scaling_set(table)
    vals = S.G(GRID)
    assert np.all(np.diff(vals) > 0)
    for t in GRID:
        assert S.g(S.G(t)) == pytest.approx(t, rel=1e-6)
        assert S.f(S.F(t)) == pytest.approx(t, rel=1e-6)
        assert S.f(t) * S.k(t) == pytest.approx(t, rel=1e-6)
    # below 1 the interpolant continues as a power law
    assert 0 < S.G(0.5) < 1


def test_scaling_set_rejects_real_decrease():
    n = np.array([2, 4, 8, 16])
    mean = np.array([3.0, 6.0, 4.0, 20.0])
    with pytest.raises(FitError):
        build_scaling_set(ScalingTable("bad", n, mean, np.full(4, 0.1), np.full(4, 50)))


def test_fit_exact_power_law_and_constant():
    n = [2, 4, 8, 16, 32]
    fit = fit_exponent(exact_table(n, [3 * x ** 2 for x in n]))
    assert abs(fit.slope - 2) < 1e-9
    assert math.exp(fit.intercept) == pytest.approx(3)
    assert fit.r_squared == pytest.approx(1)
    assert fit.fit_range == (2, 32)
    assert abs(fit_exponent(exact_table(n, [5.0] * 5)).slope) < 1e-12
    assert fit.to_csv().splitlines()[0] == "slope,stderr,intercept,nmin,nmax,r2"


def test_fit_errors():
    with pytest.raises(FitError):
        fit_exponent(exact_table([2, 4, 8], [1, 2, 3]))
    with pytest.raises(FitError):
        fit_exponent(exact_table([2, 4, 8, 16, 32], [1, 2, 3, 4, 5]), nmin=10, nmax=20)
    with pytest.raises(FitError):
        fit_exponent(exact_table([4, 4, 4, 4], [1, 2, 3, 4]))


def test_fit_range_selection():
    n = np.array([1, 2, 4, 8, 16, 32, 64, 128])
    y = np.where(n < 16, 10.0, n ** 1.5)
    fit = fit_exponent(exact_table(n, y), nmin=16)
    assert fit.slope == pytest.approx(1.5, abs=1e-12) and fit.fit_range == (16, 128)


def test_fit_coverage_under_known_noise():
    rng = np.random.default_rng(20260101)
    n = np.array([8, 16, 32, 64, 128, 256])
    inside = 0
    trials = 400
    for _ in range(trials):
        rel = 0.03
        mean = 2 * n ** 1.25 * np.exp(rng.normal(0, rel, len(n)))
        fit = fit_exponent(ScalingTable("n", n, mean, rel * mean, np.full(len(n), 100)))
        inside += abs(fit.slope - 1.25) <= 2 * fit.stderr_slope
    # nominal coverage of a 2-sigma interval is 95.4%
    assert inside / trials > 0.9


def test_estimate_G_basics():
    t = estimate_G([1, 2, 4], 50, 4, RandomSource(3))
    assert t.mean[0] >= 1 and np.all(t.samples == 50)
    assert np.all(np.diff(t.mean) > 0)
    with pytest.raises(ValueError):
        estimate_G([4, 2], 10)
    with pytest.raises(ValueError):
        estimate_G([0, 2], 10)


def test_estimate_G_worker_independent():
    a = estimate_G([2, 8, 16], 300, 4, RandomSource(5), workers=1)
    b = estimate_G([2, 8, 16], 300, 4, RandomSource(5), workers=3)
    assert a.to_csv() == b.to_csv()


def test_pilot_slope_consistent_with_larger_run():
    n = [4, 8, 16, 32]
    small = fit_exponent(estimate_G(n, 1000, 4, RandomSource(6, 1)))
    big = fit_exponent(estimate_G(n, 10_000, 4, RandomSource(6, 2)))
    assert abs(small.slope - big.slope) <= 2 * math.hypot(small.stderr_slope, big.stderr_slope)


def test_wilson_interval():
    lo, hi = wilson_interval(0, 50)
    assert lo == 0 and 0 < hi < 0.1
    lo, hi = wilson_interval(50, 50)
    assert hi == 1 and lo > 0.9
    lo, hi = wilson_interval(20, 100)
    assert lo < 0.2 < hi


def test_empirical_tail():
    vals = np.arange(1, 101)
    rows = empirical_tail(vals, 10, [0, 1, 2, 4, 8, 16])
    assert rows[0][1] == 1
    ps = [r[1] for r in rows]
    assert ps == sorted(ps, reverse=True)
    assert rows[-1][1] == 0 and rows[-1][3] > 0
    for lam, p, lo, hi in rows:
        assert lo <= p <= hi
    sampler = lambda m, rng: np.random.default_rng(rng).exponential(1.0, m)
    rows = empirical_tail(sampler, 1.0, [1, 2, 4, 8], replicas=4000, rng=1)
    assert all(geometric_decay(rows))
    assert tail_to_csv(rows).splitlines()[0] == "lambda,p,lo,hi"


def test_geometric_decay_rule():
    rows = [(1, 0.5, 0.45, 0.55), (2, 0.2, 0.16, 0.24), (4, 0.0, 0.0, 0.01), (8, 0.0, 0.0, 0.01)]
    assert geometric_decay(rows) == [True, True, True]
    flat = [(1, 0.5, 0.48, 0.52), (2, 0.49, 0.47, 0.51)]
    assert geometric_decay(flat) == [False]


def test_dimensions_on_path_tree():
    cfg = DimensionConfig.preset("pilot", g_samples=0, vol_R=(16, 32, 64, 128, 256), exit_R=(8, 16, 32, 64),
                                 walk_replicas=2000, ret_n=(32, 64, 128, 256, 512, 1024))
    rep = estimate_dimensions(cfg, trees=[path_tree(600)])
    assert rep["invalid"] == []
    assert abs(rep["d_f"]["value"] - 1) < 0.05
    assert abs(rep["d_s"]["value"] - 1) < 0.1
    assert abs(rep["d_w"]["value"] - 2) < 0.15
    assert report_to_csv(rep).splitlines()[0] == "quantity,value,stderr,nmin,nmax,r2"
