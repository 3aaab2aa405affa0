"""Scaling functions, exponent fits and tail curves."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .metrics import volume_profile
from .parallel import map_ordered
from .rng import RandomSource
from .treewalk import (MAX_DISCARD, FixedTrees, TreeEnsemble, as_ensemble, displacement_and_range,
                       estimate_return_probability, exit_time_statistics)
from .walker import infinite_lerw_lengths


class FitError(ValueError):
    pass


@dataclass
class ScalingTable:
    kind: str
    n: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        self.samples = np.asarray(self.samples, dtype=np.int64)

    @classmethod
    def from_samples(cls, kind: str, n_values, sample_lists, meta=None, exact_single=False) -> "ScalingTable":
        """Rows from raw samples; ``exact_single`` admits one exact value (stderr 0)."""
        means, errs, counts = [], [], []
        for s in sample_lists:
            s = np.asarray(s, dtype=float)
            if len(s) < 2 and not (exact_single and len(s) == 1):
                raise ValueError("each row needs at least two samples")
            means.append(s.mean())
            errs.append(s.std(ddof=1) / math.sqrt(len(s)) if len(s) > 1 else 0.0)
            counts.append(len(s))
        return cls(kind, n_values, means, errs, counts, meta or {})

    def rows(self):
        return list(zip(self.n.tolist(), self.mean.tolist(), self.stderr.tolist(), self.samples.tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "mean", "stderr", "samples"])
        for n, m, e, s in self.rows():
            w.writerow([_num(n), repr(float(m)), repr(float(e)), s])
        return buf.getvalue()

    def select(self, nmin=None, nmax=None) -> "ScalingTable":
        keep = np.ones(len(self.n), dtype=bool)
        if nmin is not None:
            keep &= self.n >= nmin
        if nmax is not None:
            keep &= self.n <= nmax
        return ScalingTable(self.kind, self.n[keep], self.mean[keep], self.stderr[keep],
                            self.samples[keep], dict(self.meta))


def _num(x):
    return int(x) if float(x).is_integer() else repr(float(x))


def isotonic_increasing(y, w=None) -> np.ndarray:
    """Pool-adjacent-violators fit of a nondecreasing sequence."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    blocks = []  # (value, weight, length)
    for yi, wi in zip(y, w):
        blocks.append([yi, wi, 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            v2, w2, n2 = blocks.pop()
            v1, w1, n1 = blocks.pop()
            blocks.append([(v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, n1 + n2])
    return np.concatenate([[v] * n for v, _, n in blocks])


class PowerInterpolant:
    """Piecewise-linear interpolation in log-log space with power-law extrapolation.

    Outside the knots the first and last segments are continued with slopes
    ``lo_slope`` and ``hi_slope``.
    """

    def __init__(self, x, y, lo_slope=None, hi_slope=None):
        self.lx = np.log(np.asarray(x, dtype=float))
        self.ly = np.log(np.asarray(y, dtype=float))
        if np.any(np.diff(self.lx) <= 0) or np.any(np.diff(self.ly) <= 0):
            raise FitError("interpolant knots must be strictly increasing")
        seg = np.diff(self.ly) / np.diff(self.lx)
        self.lo_slope = float(seg[0] if lo_slope is None else lo_slope)
        self.hi_slope = float(seg[-1] if hi_slope is None else hi_slope)

    def __call__(self, x):
        lx = np.log(np.asarray(x, dtype=float))
        out = np.interp(lx, self.lx, self.ly)
        out = np.where(lx < self.lx[0], self.ly[0] + self.lo_slope * (lx - self.lx[0]), out)
        out = np.where(lx > self.lx[-1], self.ly[-1] + self.hi_slope * (lx - self.lx[-1]), out)
        res = np.exp(out)
        return float(res) if np.ndim(res) == 0 else res

    def inverse(self) -> "PowerInterpolant":
        return PowerInterpolant(np.exp(self.ly), np.exp(self.lx), 1 / self.lo_slope, 1 / self.hi_slope)


@dataclass
class ScalingFunctionSet:
    """Ĝ with its inverse ĝ, F(R) = R ĝ(R)^2, f = F^{-1} and k(t) = ĝ(f(t))^2."""

    G: PowerInterpolant
    g: PowerInterpolant
    F: PowerInterpolant
    f: PowerInterpolant
    knots: np.ndarray
    values: np.ndarray

    def k(self, t):
        return self.g(self.f(t)) ** 2


def build_scaling_set(table: ScalingTable, tail_slope: Optional[float] = None,
                      nmin: Optional[float] = None) -> ScalingFunctionSet:
    """Scaling functions from a table of Ĝ(n), anchored at Ĝ(1) = 1.

    The table is made increasing by isotonic regression first.  Beyond the
    last row Ĝ continues with ``tail_slope`` (default: the weighted log-log fit
    over rows with n >= nmin).
    """
    n = table.n
    m = table.mean
    order = np.argsort(n)
    n, m = n[order], m[order]
    w = None
    if np.all(table.stderr > 0):
        w = 1 / table.stderr[order] ** 2
    iso = isotonic_increasing(m, w)
    if np.any(iso <= 0):
        raise FitError("table is not positive")
    se = table.stderr[order]
    drop = m[:-1] - m[1:]
    if np.any(drop > 3 * np.hypot(se[:-1], se[1:]) + 1e-12 * np.abs(m[:-1])):
        raise FitError("table decreases beyond its noise level")
    # break ties left by pooling
    for i in range(1, len(iso)):
        if iso[i] <= iso[i - 1]:
            iso[i] = iso[i - 1] * (1 + 1e-9)
    keep = n > 1
    knots = np.concatenate([[1.0], n[keep]])
    vals = np.concatenate([[1.0], iso[keep]])
    if np.any(np.diff(vals) <= 0):
        raise FitError("Ĝ(n) must exceed Ĝ(1) = 1 for n > 1")
    if tail_slope is None:
        sub = table if nmin is None else table.select(nmin=nmin)
        tail_slope = fit_exponent(sub, min_rows=2).slope if len(sub.n) >= 2 else None
    G = PowerInterpolant(knots, vals, hi_slope=tail_slope)
    g = G.inverse()
    F = PowerInterpolant(vals, vals * knots ** 2, lo_slope=1 + 2 / G.lo_slope, hi_slope=1 + 2 / G.hi_slope)
    return ScalingFunctionSet(G, g, F, F.inverse(), knots, vals)


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    stderr_slope: float
    fit_range: tuple
    r_squared: float

    def to_csv(self) -> str:
        return ("slope,stderr,intercept,nmin,nmax,r2\n"
                f"{self.slope!r},{self.stderr_slope!r},{self.intercept!r},"
                f"{_num(self.fit_range[0])},{_num(self.fit_range[1])},{self.r_squared!r}\n")


def fit_exponent(table: ScalingTable, nmin=None, nmax=None, min_rows: int = 4) -> ExponentFit:
    """Weighted least squares of log(mean) on log(n), weights 1/(stderr/mean)^2.

    Rows with zero stderr are treated as exact; if all are exact the fit is
    unweighted and the slope error comes from the residuals.
    """
    t = table.select(nmin, nmax)
    if len(t.n) < min_rows or len(np.unique(t.n)) < 2:
        raise FitError(f"need at least {max(min_rows, 2)} distinct rows in range, got {len(t.n)}")
    if np.any(t.mean <= 0):
        raise FitError("log-log fit needs positive means")
    x = np.log(t.n)
    y = np.log(t.mean)
    rel = t.stderr / t.mean
    weighted = bool(np.all(rel > 0))
    wts = 1 / rel ** 2 if weighted else np.ones_like(x)
    X = np.stack([np.ones_like(x), x], axis=1)
    A = X.T @ (wts[:, None] * X)
    beta = np.linalg.solve(A, X.T @ (wts * y))
    resid = y - X @ beta
    if weighted:
        cov = np.linalg.inv(A)
    else:
        dof = max(len(x) - 2, 1)
        cov = np.linalg.inv(A) * float(resid @ resid) / dof
    ybar = np.average(y, weights=wts)
    ss_tot = float(np.sum(wts * (y - ybar) ** 2))
    r2 = 1.0 - float(np.sum(wts * resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return ExponentFit(float(beta[1]), float(beta[0]), float(math.sqrt(max(cov[1, 1], 0.0))),
                       (float(t.n.min()), float(t.n.max())), r2)


# --- Monte Carlo tables ------------------------------------------------------------

def _lerw_chunk(K, seed, stream, job):
    n, lo, hi = job
    row = RandomSource(seed, stream).spawn(n)
    return infinite_lerw_lengths(n, K, [row.spawn(i) for i in range(lo, hi)])


def sample_Mhat(n_values, samples: int, K: int = 4, rng=0, workers=None, chunk: int = 250) -> dict:
    """M̂_n samples per n; sample i of row n uses stream spawn(n).spawn(i)."""
    seed, stream = (rng.seed, rng.stream) if isinstance(rng, RandomSource) else (int(rng), 0)
    jobs = [(int(n), lo, min(lo + chunk, samples)) for n in n_values for lo in range(0, samples, chunk)]
    parts = map_ordered(partial(_lerw_chunk, K, seed, stream), jobs, workers)
    out = {int(n): [] for n in n_values}
    for (n, _, _), p in zip(jobs, parts):
        out[n].append(p)
    return {n: np.concatenate(v) for n, v in out.items()}


def estimate_G(n_values, samples: int, K: int = 4, rng=0, workers=None, return_samples: bool = False):
    """Table of Ĝ(n) = mean M̂_n from the truncated infinite-LERW sampler."""
    n_values = [int(n) for n in n_values]
    if any(n < 1 for n in n_values) or list(n_values) != sorted(set(n_values)):
        raise ValueError("n values must be increasing integers >= 1")
    draws = sample_Mhat(n_values, samples, K, rng, workers)
    table = ScalingTable.from_samples("Mhat", n_values, [draws[n] for n in n_values],
                                      meta={"K": K, "samples": samples})
    return (table, draws) if return_samples else table


def _volume_tree(ens, radii, i):
    return volume_profile(ens.tree(i), radii)


def volume_table(trees, radii, workers=None, return_samples: bool = False):
    """Annealed E|B_d(0,R)| over untruncated balls; meta records truncation rates."""
    ens = as_ensemble(trees)
    radii = np.array(sorted(int(r) for r in radii), dtype=np.int64)
    res = map_ordered(partial(_volume_tree, ens, radii), range(ens.n_trees), workers)
    V = np.array([v for v, _ in res], dtype=float)
    T = np.array([t for _, t in res], dtype=bool)
    cols = [V[~T[:, k], k] for k in range(len(radii))]
    table = ScalingTable.from_samples("volume", radii, cols, exact_single=ens.n_trees == 1,
                                      meta={"truncated_rate": T.mean(axis=0).tolist()})
    return (table, V, T) if return_samples else table


def exit_time_table(trees, radii, replicas, rng=0, kind="intrinsic", workers=None) -> ScalingTable:
    rows = exit_time_statistics(trees, radii, replicas, rng, kind=kind, workers=workers)
    n_trees = as_ensemble(trees).n_trees
    return ScalingTable("tau_R" if kind == "intrinsic" else "tau_r", [r[0] for r in rows],
                        [r[1] for r in rows], [r[2] for r in rows], [n_trees * replicas] * len(rows),
                        meta={"discard_rate": rows[0][3] if rows else 0.0})


def return_probability_table(trees, n_values, replicas=100, rng=0, method="exact",
                             workers=None) -> ScalingTable:
    """Rows (2n, mean p̃_{2n}(0,0), stderr)."""
    est = estimate_return_probability(trees, n_values, replicas, rng, method=method, workers=workers)
    n_trees = as_ensemble(trees).n_trees
    count = n_trees if method == "exact" else n_trees * replicas
    return ScalingTable("p_tilde", [2 * e.n for e in est], [e.p_tilde for e in est],
                        [e.p_tilde_stderr for e in est], [count] * len(est),
                        meta={"discard_rate": est[0].discard_rate, "valid": all(e.valid for e in est)})


def range_tables(trees, n_values, replicas=50, rng=0, workers=None):
    rows = displacement_and_range(trees, n_values, replicas, rng, workers=workers)
    count = as_ensemble(trees).n_trees * replicas
    meta = {"discard_rate": rows[0]["discard_rate"]}
    mk = lambda key, kind: ScalingTable(kind, [r["n"] for r in rows], [r[key] for r in rows],
                                        [r[key + "_err"] for r in rows], [count] * len(rows), dict(meta))
    return mk("d", "displacement"), mk("Y", "Y_n"), mk("W", "W_n")


# --- tails -------------------------------------------------------------------------

def wilson_interval(k: int, n: int, z: float = 1.959963984540054):
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    c = (p + z * z / (2 * n)) / den
    h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, c - h)
    hi = 1.0 if k == n else min(1.0, c + h)
    return lo, hi


def empirical_tail(observable, normalizer: float, lambdas, replicas: Optional[int] = None, rng=0):
    """Rows (λ, p, lo, hi): empirical P(obs > λ · normalizer) with Wilson intervals.

    ``observable`` is an array of samples or a callable ``(replicas, rng) -> array``.
    """
    if callable(observable):
        samples = np.asarray(observable(replicas, rng), dtype=float)
    else:
        samples = np.asarray(observable, dtype=float)
    n = len(samples)
    rows = []
    for lam in lambdas:
        k = int(np.count_nonzero(samples > lam * normalizer))
        lo, hi = wilson_interval(k, n)
        rows.append((float(lam), k / n, lo, hi))
    return rows


def tail_to_csv(rows) -> str:
    return "lambda,p,lo,hi\n" + "".join(f"{_num(l)},{p!r},{lo!r},{hi!r}\n" for l, p, lo, hi in rows)


def geometric_decay(rows, ratio: float = 0.7) -> list[bool]:
    """For successive cells: is p_{k+1} <= ratio * p_k compatible with the intervals?

    A step passes when the point estimates satisfy it, or when the lower
    bound of the later cell is at most ``ratio`` times the upper bound of the
    earlier one.
    """
    out = []
    for (_, p0, lo0, hi0), (_, p1, lo1, hi1) in zip(rows[:-1], rows[1:]):
        out.append(p1 <= ratio * p0 or lo1 <= ratio * hi0)
    return out


# --- dimension report ----------------------------------------------------------------

@dataclass
class DimensionConfig:
    seed: int = 2026
    workers: int = 1
    # growth exponent
    g_n: tuple = (16, 32, 64, 128, 256, 512)
    g_samples: int = 3000
    g_K: int = 4
    # trees
    vol_r: int = 200
    vol_K: int = 4
    vol_trees: int = 100
    vol_R: tuple = (16, 23, 32, 45, 64, 91, 128, 181, 256)
    walk_r: int = 100
    walk_K: int = 4
    walk_trees: int = 400
    walk_replicas: int = 50
    exit_R: tuple = (8, 11, 16, 23, 32, 45, 64)
    ret_trees: int = 200
    nmin: int = 16
    ret_n: tuple = (32, 64, 128, 256, 512, 1024, 2048, 4096)
    range_n: tuple = (64, 128, 256, 512, 1024, 2048, 4096, 8192)

    PRESETS = {}

    @classmethod
    def preset(cls, name: str, **overrides) -> "DimensionConfig":
        base = dict(cls.PRESETS[name])
        base.update(overrides)
        return cls(**base)


DimensionConfig.PRESETS = {
    "desk": {},
    "pilot": dict(g_n=(16, 32, 64, 128), g_samples=300, vol_r=100, vol_trees=20,
                  vol_R=(16, 23, 32, 45, 64, 91, 128), walk_r=60, walk_trees=30, walk_replicas=20,
                  exit_R=(8, 11, 16, 23, 32), ret_trees=20, ret_n=(32, 64, 128, 256, 512),
                  range_n=(64, 128, 256, 512, 1024)),
    "overnight": dict(g_n=(16, 32, 64, 128, 256, 512, 1024), g_samples=10000, vol_trees=400,
                      walk_trees=1000, walk_replicas=100, ret_trees=1000),
}


def estimate_dimensions(cfg: DimensionConfig, trees=None) -> dict:
    """Growth exponent, d_f, d_w and d_s, each with its fit and table.

    ``trees`` replaces the sampled UST ensembles (used for synthetic inputs
    such as the path tree); ``cfg.g_samples == 0`` skips the growth exponent.
    """
    root = RandomSource(cfg.seed)
    report = {"invalid": []}
    invalid = report["invalid"]

    def record(name, table, fit, scale=1.0):
        report[name] = {"value": scale * fit.slope, "stderr": abs(scale) * fit.stderr_slope,
                        "fit": fit, "table": table}

    if cfg.g_samples > 0:
        G = estimate_G(cfg.g_n, cfg.g_samples, cfg.g_K, root.spawn(1), cfg.workers)
        record("growth_exponent", G, fit_exponent(G, nmin=cfg.nmin))

    def ensemble(r, K, n, k):
        return as_ensemble(trees) if trees is not None else TreeEnsemble(r, K, "wired", n, root.spawn(k).stream)

    V = volume_table(ensemble(cfg.vol_r, cfg.vol_K, cfg.vol_trees, 2), cfg.vol_R, cfg.workers)
    record("d_f", V, fit_exponent(V))
    if max(V.meta["truncated_rate"]) > MAX_DISCARD:
        invalid.append("d_f: truncated balls above 1%")

    tau = exit_time_table(ensemble(cfg.walk_r, cfg.walk_K, cfg.walk_trees, 3), cfg.exit_R,
                          cfg.walk_replicas, root.spawn(4), workers=cfg.workers)
    record("d_w", tau, fit_exponent(tau))
    if tau.meta["discard_rate"] > MAX_DISCARD:
        invalid.append("d_w: window-edge discards above 1%")

    P = return_probability_table(ensemble(cfg.walk_r, cfg.walk_K, cfg.ret_trees, 5), cfg.ret_n,
                                 method="exact", workers=cfg.workers)
    record("d_s", P, fit_exponent(P), scale=-2.0)
    if not P.meta["valid"]:
        invalid.append("d_s: lost mass in more than 1% of trees")
    return report


def report_to_csv(report: dict) -> str:
    """One row per estimated exponent."""
    lines = ["quantity,value,stderr,nmin,nmax,r2"]
    for name in ("growth_exponent", "d_f", "d_w", "d_s"):
        if name in report:
            e = report[name]
            f = e["fit"]
            lines.append(f"{name},{e['value']!r},{e['stderr']!r},{_num(f.fit_range[0])},"
                         f"{_num(f.fit_range[1])},{f.r_squared!r}")
    return "\n".join(lines) + "\n"
