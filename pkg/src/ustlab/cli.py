"""Command-line experiment runner.

Every result file starts with its full configuration, so ``ustlab rerun FILE``
regenerates it.  Result files depend only on the configuration and seed; the
worker count and wall time go to a ``.run.json`` sidecar (or stderr for
stdout output).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from .estimators import (DimensionConfig, FitError, ScalingTable, build_scaling_set, estimate_G,
                         estimate_dimensions, fit_exponent, report_to_csv, sample_Mhat,
                         tail_to_csv, empirical_tail, volume_table)
from .metrics import WindowTooSmall, resistance_to_ball_complement, volume_profile
from .rng import MASK64, RandomSource
from .treewalk import (MAX_DISCARD, TreeEnsemble, as_ensemble, displacement_and_range,
                       estimate_return_probability, exit_time_statistics)
from .ust import DomainError, dump_tree, load_tree, sample_ust_window
from .walker import CapExceeded, sample_infinite_lerw

CONFIG_TAG = "# ustlab-config "
EXIT_INVALID = 1
EXIT_RUNTIME = 3


class Flagged(Exception):
    """The run finished but some estimate is invalid."""

    def __init__(self, reasons):
        super().__init__("; ".join(reasons))
        self.reasons = list(reasons)


# --- argument types ------------------------------------------------------------------

def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v <= MASK64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def _positive(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _int_list(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("list entries must be integers >= 1")
    return sorted(set(vals))


def _float_list(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals or any(v < 0 or not math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError("list entries must be finite and >= 0")
    return sorted(set(vals))


# --- output ----------------------------------------------------------------------------

def atomic_write(path: str, text: str) -> None:
    """Write via a temporary file in the target directory and rename into place."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".ustlab-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def config_of(args) -> dict:
    skip = {"func", "out", "workers", "tree_text", "config_from"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return cfg


def csv_header(args) -> str:
    return (CONFIG_TAG + json.dumps(config_of(args), sort_keys=True) + "\n"
            + f"# ustlab-version {__version__}\n")


def jsonl_header(args) -> str:
    return json.dumps({"config": config_of(args), "version": __version__}, sort_keys=True) + "\n"


def emit(args, text: str, started: float, extra=None) -> None:
    run = {"wall_time_s": round(time.perf_counter() - started, 3),
           "workers": args.workers, "version": __version__}
    run.update(extra or {})
    if args.out in (None, "-"):
        sys.stdout.write(text)
        print(json.dumps(run, sort_keys=True), file=sys.stderr)
    else:
        atomic_write(args.out, text)
        atomic_write(args.out + ".run.json", json.dumps(run, sort_keys=True) + "\n")


def _summary(d: dict) -> str:
    return "# summary " + json.dumps(d, sort_keys=True) + "\n"


# --- commands --------------------------------------------------------------------------

def cmd_sample_lerw(args):
    root = RandomSource(args.seed)
    lines = [jsonl_header(args)]
    for i in range(args.samples):
        src = root.spawn(i)
        s = sample_infinite_lerw(args.l, args.trunc_factor, src)
        rec = {"index": i, "seed_stream": src.stream, "length": s.steps,
               "raw_steps": s.raw_steps, "path": s.path.array.tolist()}
        lines.append(json.dumps(rec) + "\n")
    return "".join(lines), {}


def cmd_sample_ust(args):
    tree = sample_ust_window(args.r, args.method, args.K, RandomSource(args.seed))
    return dump_tree(tree), {}


def _read_tree(path):
    with open(path) as fh:
        return load_tree(fh.read())


def cmd_ball_volume(args):
    tree = _read_tree(args.tree)
    vols, trunc = volume_profile(tree, args.R)
    rows = ["seed,R,volume,truncated\n"]
    for R, v, t in zip(args.R, vols.tolist(), trunc.tolist()):
        rows.append(f"{tree.meta['seed']},{R},{v},{int(t)}\n")
    text = csv_header(args) + "".join(rows)
    if trunc.any():
        _flag(text, [f"ball of radius {R} is truncated" for R, t in zip(args.R, trunc.tolist()) if t])
    return text, {}


def _flag(text, reasons):
    err = Flagged(reasons)
    err.text = text + _summary({"invalid": reasons})
    raise err


def cmd_resistance(args):
    tree = _read_tree(args.tree)
    rows = ["seed,R,reff\n"]
    for R in args.R:
        q = resistance_to_ball_complement(tree, R)
        rows.append(f"{tree.meta['seed']},{R},{q.value!r}\n")
    return csv_header(args) + "".join(rows), {}


def _ensemble(args):
    if args.tree:
        trees = [_read_tree(p) for p in args.tree]
        return as_ensemble(trees, args.mode)
    ens = TreeEnsemble(args.r, args.K, args.method, args.fresh_trees, RandomSource(args.seed).spawn(0).stream)
    return as_ensemble(ens, args.mode)


def cmd_walk(args):
    ens = _ensemble(args)
    walk_rng = RandomSource(args.seed).spawn(1)
    rows = ["n,stat,value,stderr,discard_rate\n"]
    discard = 0.0
    if args.n:
        est = estimate_return_probability(ens, args.n, args.replicas, walk_rng, method="walks",
                                          workers=args.workers)
        for e in est:
            rows.append(f"{2 * e.n},p,{e.p!r},{e.stderr!r},{e.discard_rate!r}\n")
            rows.append(f"{2 * e.n},p_tilde,{e.p_tilde!r},{e.p_tilde_stderr!r},{e.discard_rate!r}\n")
            discard = max(discard, e.discard_rate)
        for r in displacement_and_range(ens, args.n, args.replicas, RandomSource(args.seed).spawn(2),
                                        workers=args.workers):
            for key in ("d", "Y", "W"):
                rows.append(f"{r['n']},{key},{r[key]!r},{r[key + '_err']!r},{r['discard_rate']!r}\n")
            discard = max(discard, r["discard_rate"])
    for kind, radii, k in (("intrinsic", args.exit_R, 3), ("euclidean", args.exit_r, 4)):
        if radii:
            stat = "tau_R" if kind == "intrinsic" else "tau_r"
            for R, m, e, dr in exit_time_statistics(ens, radii, args.replicas, RandomSource(args.seed).spawn(k),
                                                    kind=kind, workers=args.workers):
                rows.append(f"{R},{stat},{m!r},{e!r},{dr!r}\n")
                discard = max(discard, dr)
    text = csv_header(args) + "".join(rows)
    if discard > MAX_DISCARD:
        _flag(text, [f"discard rate {discard:.4f} exceeds {MAX_DISCARD}"])
    return text, {"discard_rate": discard}


def _preset(args) -> DimensionConfig:
    return DimensionConfig.preset(args.budget, seed=args.seed)


def cmd_estimate_g(args):
    cfg = _preset(args)
    n = args.n or list(cfg.g_n)
    samples = args.samples or cfg.g_samples
    K = args.K or cfg.g_K
    table = estimate_G(n, samples, K, RandomSource(args.seed).spawn(1), args.workers)
    text = csv_header(args) + table.to_csv()
    if len(table.n) >= 4:
        fit = fit_exponent(table, nmin=args.nmin)
        text += _summary({"fit": asdict(fit)})
    return text, {}


def cmd_estimate_dims(args):
    cfg = _preset(args)
    cfg.workers = args.workers
    rep = estimate_dimensions(cfg)
    text = csv_header(args) + report_to_csv(rep)
    for name in ("growth_exponent", "d_f", "d_w", "d_s"):
        if name in rep:
            t = rep[name]["table"]
            text += f"# table {name} {t.kind}\n" + "".join("# " + ln + "\n" for ln in t.to_csv().splitlines())
    if rep["invalid"]:
        _flag(text, rep["invalid"])
    return text, {}


def _read_table(path) -> ScalingTable:
    with open(path) as fh:
        rows = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    if rows[0] != "n,mean,stderr,samples":
        raise ValueError(f"{path} is not a scaling table")
    data = np.array([[float(v) for v in ln.split(",")] for ln in rows[1:]])
    return ScalingTable("Mhat", data[:, 0], data[:, 1], data[:, 2], data[:, 3].astype(np.int64))


def cmd_tails(args):
    cfg = _preset(args)
    root = RandomSource(args.seed)
    if args.g_table:
        pilot = _read_table(args.g_table)
        pilot_meta = {"source": os.path.basename(args.g_table)}
    else:
        pilot = estimate_G(list(cfg.g_n), max(cfg.g_samples // 3, 100), cfg.g_K, root.spawn(10), args.workers)
        pilot_meta = {"source": "pilot", "seed_stream": root.spawn(10).stream}
    S = build_scaling_set(pilot, nmin=16)
    extra = {}
    if args.observable == "lerw":
        n = args.n
        draws = sample_Mhat([n], args.samples, cfg.g_K, root.spawn(11), args.workers)[n]
        norm = float(S.G(n))
        label = {"n": n, "normalizer": "G_hat(n)", "value": norm}
        rows = empirical_tail(draws, norm, args.lambdas)
    else:
        R = args.n
        ens = TreeEnsemble(args.r, args.K, "wired", args.samples, root.spawn(12).stream)
        _, V, T = volume_table(ens, [R], args.workers, return_samples=True)
        vals = V[~T[:, 0], 0]
        norm = float(S.g(R)) ** 2
        label = {"R": R, "normalizer": "g_hat(R)^2", "value": norm,
                 "truncated_rate": float(T[:, 0].mean())}
        rows = empirical_tail(vals, norm, args.lambdas)
        extra["truncated_rate"] = float(T[:, 0].mean())
    text = (csv_header(args) + "# normalizer " + json.dumps({**label, "pilot": pilot_meta}, sort_keys=True)
            + "\n" + tail_to_csv(rows))
    return text, extra


def cmd_oracle(args):
    from .oracle import selftest
    results = selftest()
    text = csv_header(args) + "check,passed\n" + "".join(f"{name},{int(ok)}\n" for name, ok in results)
    failed = [name for name, ok in results if not ok]
    if failed:
        _flag(text, [f"oracle check failed: {f}" for f in failed])
    return text, {}


def cmd_rerun(args):
    with open(args.file) as fh:
        first = fh.readline()
    if first.startswith(CONFIG_TAG):
        cfg = json.loads(first[len(CONFIG_TAG):])
    elif first.startswith("{"):
        cfg = json.loads(first)["config"]
    elif first.startswith("ust-window"):
        meta = dict(f.split("=", 1) for f in first.split()[2:])
        cfg = {"command": "sample-ust", "r": int(meta["r"]), "K": int(meta["K"]),
               "method": meta["method"], "seed": int(meta["seed"])}
    else:
        raise ValueError(f"{args.file} carries no ustlab configuration")
    argv = config_to_argv(cfg)
    argv += ["--out", args.out or "-", "--workers", str(args.workers)]
    return main(argv)


def config_to_argv(cfg: dict) -> list:
    cfg = dict(cfg)
    cmd = cfg.pop("command")
    argv = cmd.split()
    if "action" in cfg:
        argv.append(cfg.pop("action"))
    for k, v in sorted(cfg.items()):
        if v is None or v is False or v == []:
            continue
        flag = "--" + k.replace("_", "-")
        if k in ("R", "K", "l", "n", "r") or k.startswith("exit_"):
            flag = "--" + k.replace("exit_", "exit-")
        if v is True:
            argv.append(flag)
        elif isinstance(v, list):
            if k == "tree":
                for p in v:
                    argv += [flag, p]
            else:
                argv += [flag, ",".join(_fmt(x) for x in v)]
        else:
            argv += [flag, _fmt(v)]
    return argv


def _fmt(x):
    if isinstance(x, float) and x.is_integer():
        return str(int(x))
    return str(x)


# --- parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ustlab", description="UST and LERW experiments on Z^2.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        if seed:
            sp.add_argument("--seed", type=_u64, default=0, help="64-bit experiment seed")
        sp.add_argument("--workers", type=_positive, default=1,
                        help="worker processes (USTLAB_WORKERS overrides)")
        sp.add_argument("--out", default="-", help="output file (default: stdout)")

    def budget(sp):
        sp.add_argument("--budget", "--preset", dest="budget", default="desk",
                        choices=sorted(DimensionConfig.PRESETS), help="budget preset")

    s = sub.add_parser("sample-lerw", help="infinite-LERW samples up to the exit of B(0, l), as JSON lines")
    s.add_argument("--l", type=_positive, required=True, help="exit radius")
    s.add_argument("--trunc-factor", type=int, default=32, help="SRW runs to the exit of B(0, factor*l)")
    s.add_argument("--samples", type=_positive, default=1)
    common(s)
    s.set_defaults(func=cmd_sample_lerw)

    s = sub.add_parser("sample-ust", help="windowed UST around the origin, as a tree file")
    s.add_argument("--r", type=_positive, required=True, help="trusted radius")
    s.add_argument("--K", type=int, default=4, help="box half-width factor (>= 4)")
    s.add_argument("--method", choices=("wired", "spine"), default="wired")
    common(s)
    s.set_defaults(func=cmd_sample_ust)

    for name, func, helptext in (("ball-volume", cmd_ball_volume, "intrinsic ball volumes |B_d(0,R)|"),
                                 ("resistance", cmd_resistance, "R_eff(0, B_d(0,R)^c)")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--tree", required=True, help="tree file from sample-ust")
        s.add_argument("--R", type=_int_list, required=True, help="comma-separated radii")
        common(s, seed=False)
        s.set_defaults(func=func)

    s = sub.add_parser("walk", help="random walk statistics on stored or fresh trees")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--tree", action="append", help="tree file (repeatable)")
    src.add_argument("--fresh-trees", type=_positive, help="number of fresh trees to sample")
    s.add_argument("--r", type=_positive, default=100, help="trusted radius of fresh trees")
    s.add_argument("--K", type=int, default=4, help="box half-width factor (>= 4)")
    s.add_argument("--method", choices=("wired", "spine"), default="wired")
    s.add_argument("--n", type=_int_list, default=[], help="times n: p_2n, p~_2n, d, Y_n, W_n")
    s.add_argument("--exit-R", type=_int_list, default=[], help="intrinsic exit radii")
    s.add_argument("--exit-r", type=_int_list, default=[], help="Euclidean exit radii")
    s.add_argument("--replicas", type=_positive, default=50, help="walks per tree")
    s.add_argument("--mode", choices=("annealed", "quenched"), default="annealed")
    common(s)
    s.set_defaults(func=cmd_walk)

    s = sub.add_parser("estimate-g", help="table of G_hat(n) = E M_hat_n")
    s.add_argument("--n", type=_int_list, help="values of n (default from budget)")
    s.add_argument("--samples", type=_positive, help="samples per n (default from budget)")
    s.add_argument("--K", type=int, help="truncation factor (default from budget)")
    s.add_argument("--nmin", type=int, default=16, help="smallest n used in the fit")
    budget(s)
    common(s)
    s.set_defaults(func=cmd_estimate_g)

    s = sub.add_parser("estimate-dims", help="growth exponent, d_f, d_w and d_s")
    budget(s)
    common(s)
    s.set_defaults(func=cmd_estimate_dims)

    s = sub.add_parser("tails", help="empirical tail curves with Wilson intervals")
    s.add_argument("--observable", choices=("lerw", "volume"), default="lerw")
    s.add_argument("--n", type=_positive, default=128, help="n for M_hat_n, or R for |B_d(0,R)|")
    s.add_argument("--lambdas", type=_float_list, default=[1.0, 2.0, 4.0, 8.0])
    s.add_argument("--samples", type=_positive, default=1000, help="samples (trees for volume)")
    s.add_argument("--r", type=_positive, default=200, help="trusted radius for volume trees")
    s.add_argument("--K", type=int, default=4, help="box half-width factor (>= 4)")
    s.add_argument("--g-table", help="frozen G_hat table (CSV from estimate-g); default: fresh pilot")
    budget(s)
    common(s)
    s.set_defaults(func=cmd_tails)

    s = sub.add_parser("oracle", help="exact oracles")
    s.add_argument("action", choices=("selftest",))
    common(s, seed=False)
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("rerun", help="rerun the experiment recorded in a result file")
    s.add_argument("file")
    s.add_argument("--out", default="-")
    s.add_argument("--workers", type=_positive, default=1)
    s.set_defaults(func=None)
    return p


def _validate(args, parser):
    for key in ("K",):
        v = getattr(args, key, None)
        if v is not None and args.command in ("sample-ust", "walk", "tails") and v < 4:
            parser.error("--K must be >= 4")
    if args.command == "sample-lerw" and args.trunc_factor < 2:
        parser.error("--trunc-factor must be >= 2")
    if args.command == "estimate-g" and args.K is not None and args.K < 2:
        parser.error("--K must be >= 2")
    if args.command == "walk" and not (args.n or args.exit_R or args.exit_r):
        parser.error("give at least one of --n, --exit-R, --exit-r")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "rerun":
        try:
            return cmd_rerun(args)
        except (OSError, ValueError) as exc:
            print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}), file=sys.stderr)
            return EXIT_RUNTIME
    _validate(args, parser)
    started = time.perf_counter()
    try:
        text, extra = args.func(args)
    except Flagged as exc:
        emit(args, exc.text, started, {"invalid": exc.reasons})
        print(json.dumps({"error": "invalid-estimate", "detail": exc.reasons}), file=sys.stderr)
        return EXIT_INVALID
    except (WindowTooSmall, DomainError, CapExceeded, FitError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}), file=sys.stderr)
        return EXIT_RUNTIME
    emit(args, text, started, extra)
    return 0


if __name__ == "__main__":
    sys.exit(main())
