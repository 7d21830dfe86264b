"""Command-line entry point: ``sketchlab <command> [flags]``.

Commands: verify-lemma, xi, chi2, detect, sweep, gap, dump-sketch.

Exit codes: 0 pass, 1 statistical failure, 2 usage error, 3 super-critical
regime unreachable (warning), 4 conditioning acceptance rate below floor.

Every flag can also come from ``--config FILE``: one ``key = value`` per
line, keys spelled like the flags (``k-grid = 1,10,100``); flags given on
the command line win.
"""
import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import checks
from .divergence import MC_MIN_SAMPLES
from .distinguisher import (
    ExperimentConfig,
    STATISTICS,
    default_k_grid,
    is_monotone,
    sweep_phase_transition,
)
from .ensembles import KINDS, InstanceKind, SpikeParams, corollary_instance, gap_check
from .records import RunManifest, write_csv, write_jsonl
from .rng import Rng
from .sketch import dump_sketch, make_random_sketch

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_UNREACHABLE, EXIT_CONDITIONING = 0, 1, 2, 3, 4
OUT_DIR_ENV = "SKETCHLAB_OUT_DIR"
# default k-grids stay below this many stored sketch entries (~480 MB)
GRID_ENTRY_BUDGET = 60_000_000

CURVE_COLUMNS = [
    "k", "side-null-rate", "side-spiked-rate", "advantage", "ci-lo", "ci-hi",
    "statistic", "seed", "threshold", "label", "passed", "run_id",
]


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ parsing helpers


def int_list(text):
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def float_list(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def k_grid(text):
    """``1,10,100`` or ``logspace:lo:hi:count`` (base-10 exponents)."""
    text = str(text)
    if text.startswith("logspace:"):
        parts = text.split(":")
        if len(parts) != 4:
            raise argparse.ArgumentTypeError("logspace grid must be logspace:lo:hi:count")
        try:
            lo, hi, cnt = float(parts[1]), float(parts[2]), int(parts[3])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad logspace grid {text!r}")
        ks = np.unique(np.round(np.logspace(lo, hi, cnt)).astype(int))
        grid = [int(k) for k in ks]
    else:
        grid = int_list(text)
    if not grid or min(grid) < 1:
        raise argparse.ArgumentTypeError(f"k-grid needs positive integers, got {text!r}")
    return grid


def dims_list(text):
    out = []
    for part in str(text).split(","):
        try:
            m, n = part.lower().split("x")
            out.append((int(m), int(n)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"dimensions must look like 4x4, got {part!r}")
        if out[-1][0] < 1 or out[-1][1] < 1:
            raise argparse.ArgumentTypeError(f"dimensions must be positive, got {part!r}")
    return out


def read_config(path):
    cfg = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        cfg[key.replace("-", "_")] = val
    return cfg


def _common(p, trials=None, seed=0):
    p.add_argument("--config", help="key = value file; command-line flags override it")
    p.add_argument("--seed", type=int, default=seed, help="master seed (default %(default)s)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for grid cells")
    p.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or ./sketchlab-out)")
    if trials is not None:
        p.add_argument("--trials", type=int, default=trials, help="trials (default %(default)s)")


def _instance_flags(p):
    p.add_argument("--instance", choices=KINDS, help="preset hard instance")
    p.add_argument("--n", type=int, help="columns (square instances: size)")
    p.add_argument("--m", type=int, help="rows (raw spike runs)")
    p.add_argument("--d", type=int, help="columns of the rectangular instance")
    p.add_argument("--eps", type=float, help="accuracy of the rectangular instance")
    p.add_argument("--alpha", type=float, help="approximation factor / spike constant")
    p.add_argument("--p", type=float, help="Schatten exponent (> 2)")
    p.add_argument("--s", type=int, help="Ky-Fan index")
    p.add_argument("--C", type=float, default=5.0, help="alpha-operator spike constant")
    p.add_argument("--allow-outside-regime", action="store_true",
                   help="permit Ky-Fan s above 0.0789 sqrt(n)")
    p.add_argument("--r", type=int, default=1, help="spike rank for raw runs")
    p.add_argument("--spike", type=float_list, help="spike magnitudes (one value is repeated r times)")
    p.add_argument("--s-norm2", type=float, help="raw runs: ||s||^2 split evenly over r spikes")


def build_parser():
    parser = argparse.ArgumentParser(prog="sketchlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-lemma", help="exact product vs Monte Carlo for E exp(x^T A y)")
    _common(p)
    p.add_argument("--dims", type=dims_list, default=dims_list("1x1,2x3,4x4,8x8"))
    p.add_argument("--frobenius-cap", type=float, default=0.9,
                   help="Frobenius norms used are cap/3, 2cap/3, cap (default %(default)s)")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--matrices", type=int, default=50, help="random matrices per shape and norm")
    p.add_argument("--method", choices=("importance", "plain"), default="importance")

    for name, trials, helptext in (
        ("xi", 10_000, "mean of xi against k ||s||^2"),
        ("chi2", 100_000, "conditioned chi-square estimate against k ||s||^4"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common(p, trials=trials)
        p.add_argument("--k-grid", type=k_grid, default=k_grid("1,16,256"))
        p.add_argument("--r", type=int_list, default=[1, 4], help="spike ranks")
        p.add_argument("--s-norm2", type=float_list, default=[0.01, 0.1], help="values of ||s||^2")
        p.add_argument("--m", type=int, default=32)
        p.add_argument("--n", type=int, default=32)
        if name == "chi2":
            p.add_argument("--c", type=float_list, default=[0.001, 0.01, 0.05],
                           help="constants for the total variation bound")

    for name, helptext in (
        ("detect", "advantage curve of a sketched detection test"),
        ("sweep", "phase-transition sweep around k = 1/||s||^4"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common(p, trials=400)
        _instance_flags(p)
        p.add_argument("--k-grid", type=k_grid, help="comma list or logspace:lo:hi:count")
        p.add_argument("--statistic", choices=STATISTICS, default="norm-squared")
        p.add_argument("--per-trial-sketch", action="store_true",
                       help="draw a new sketch for every trial")
        p.add_argument("--gap-trials", type=int, default=100,
                       help="trials of the norm-gap check for preset instances")

    p = sub.add_parser("gap", help="norm-gap success rates of a preset instance")
    _common(p, trials=100)
    _instance_flags(p)
    p.add_argument("--min-rate", type=float, default=0.9, help="required success rate per side")

    p = sub.add_parser("dump-sketch", help="write a random sketch in the binary dump format")
    _common(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", help="file name (default sketch-k{k}-m{m}-n{n}.bin in the out dir)")
    return parser, sub


def parse_args(argv):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cmd_parser = sub.choices[args.command]
        known = {a.dest for a in cmd_parser._actions}
        try:
            cfg = read_config(args.config)
        except (OSError, UsageError) as exc:
            parser.error(str(exc))
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        cmd_parser.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return parser, args


# ------------------------------------------------------------------ commands


def out_dir(args):
    d = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or "sketchlab-out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _config_of(args):
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in ("out_dir", "threads", "config"):
            continue
        cfg[k] = [list(x) if isinstance(x, tuple) else x for x in v] if isinstance(v, list) else v
    return cfg


def _expect(seconds):
    print(f"expected runtime: ~{max(1, math.ceil(seconds))} s (single core)", file=sys.stderr)


def _finish(manifest, directory, status, code):
    manifest.results["status"] = status
    manifest.results["exit_code"] = code
    path = manifest.write(directory / f"{manifest.command}.manifest.json")
    print(f"{manifest.command}: {status} (manifest {path})")
    return code


def cmd_verify_lemma(args):
    if args.samples < MC_MIN_SAMPLES:
        raise UsageError(f"--samples must be >= {MC_MIN_SAMPLES}")
    if args.matrices < 1:
        raise UsageError("--matrices must be >= 1")
    if not 0 <= args.frobenius_cap <= 0.9:
        raise UsageError("--frobenius-cap must lie in [0, 0.9]")
    cap = args.frobenius_cap
    norms = [0.0] if cap == 0 else [cap / 3, 2 * cap / 3, cap]
    _expect(len(args.dims) * len(norms) * args.matrices * args.samples * 2.5e-7)
    d = out_dir(args)
    man = RunManifest("verify-lemma", _config_of(args), args.seed)
    recs = checks.verify_lemma_grid(args.dims, norms, args.matrices, args.samples, args.seed,
                                    method=args.method, threads=args.threads)
    for r in recs:
        r["run_id"] = man.run_id
    man.outputs.append(write_jsonl(d / "verify-lemma.jsonl", recs))
    failed = sum(not r["passed"] for r in recs)
    man.results.update(checked=len(recs), failed=failed)
    for r in recs[:: max(1, len(recs) // 12)]:
        print(f"  {r['shape']:>5} |A|_F={r['frobenius']:.3f} exact={r['exact']:.6f} "
              f"mc={r['estimate']:.6f}±{r['std_error']:.2e} bound={r['bound']:.6f}")
    return _finish(man, d, "pass" if not failed else "fail", EXIT_FAIL if failed else EXIT_PASS)


def _grid_common(args):
    if args.trials < 2:
        raise UsageError("--trials must be >= 2")
    for n2 in args.s_norm2:
        if not n2 > 0:
            raise UsageError(f"--s-norm2 values must be positive, got {n2}")
    for r in args.r:
        if not 1 <= r <= min(args.m, args.n):
            raise UsageError(f"spike rank {r} outside [1, min(m, n)]")
    for k in args.k_grid:
        if k > args.m * args.n:
            raise UsageError(f"k={k} exceeds m*n={args.m * args.n}")


def cmd_xi(args):
    _grid_common(args)
    cells = len(args.k_grid) * len(args.r) * len(args.s_norm2)
    _expect(cells * args.trials * args.m * args.n * max(args.k_grid) * 2e-10 + 1)
    d = out_dir(args)
    man = RunManifest("xi", _config_of(args), args.seed)
    recs = checks.xi_grid(args.k_grid, args.r, args.s_norm2, args.m, args.n, args.trials,
                          args.seed, threads=args.threads)
    for r in recs:
        r["run_id"] = man.run_id
        print(f"  k={r['k']:<5} r={r['r']} |s|^2={r['s_norm2']:.4g} mean xi={r['mean_xi']:.5g} "
              f"expected={r['expected']:.5g} z={r['z']:+.2f}")
    man.outputs.append(write_jsonl(d / "xi.jsonl", recs))
    failed = sum(not (r["passed"] and r["markov_ok"]) for r in recs)
    man.results.update(checked=len(recs), failed=failed)
    return _finish(man, d, "pass" if not failed else "fail", EXIT_FAIL if failed else EXIT_PASS)


def cmd_chi2(args):
    if args.trials < MC_MIN_SAMPLES:
        raise UsageError(f"--trials must be >= {MC_MIN_SAMPLES}")
    _grid_common(args)
    for c in args.c:
        if not 0 < c < 0.5:
            raise UsageError(f"--c values must lie in (0, 1/2), got {c}")
    cells = len(args.k_grid) * len(args.r) * len(args.s_norm2)
    _expect(cells * args.trials * args.m * args.n * max(args.k_grid) * 4e-10 + 1)
    d = out_dir(args)
    man = RunManifest("chi2", _config_of(args), args.seed)
    recs = checks.chi2_grid(args.k_grid, args.r, args.s_norm2, args.m, args.n, args.trials,
                            args.seed, cs=args.c, threads=args.threads)
    for r in recs:
        r["run_id"] = man.run_id
        if r["record"] == "chi2" and not r["conditioning_failed"]:
            print(f"  k={r['k']:<5} r={r['r']} |s|^2={r['s_norm2']:.4g} "
                  f"chi2={r['estimate']:.4g}±{r['std_error']:.2g} bound={r['chi2_bound']:.4g} "
                  f"accept={r['acceptance_rate']:.4f}")
    man.outputs.append(write_jsonl(d / "chi2.jsonl", recs))
    main_rows = [r for r in recs if r["record"] == "chi2"]
    cond = sum(r["conditioning_failed"] for r in main_rows)
    failed = sum(not r["passed"] for r in main_rows)
    man.results.update(checked=len(main_rows), failed=failed, conditioning_failed=cond)
    if cond:
        return _finish(man, d, "conditioning-floor", EXIT_CONDITIONING)
    return _finish(man, d, "pass" if not failed else "fail", EXIT_FAIL if failed else EXIT_PASS)


def _kind_from(args):
    return InstanceKind(
        args.instance, n=args.n, d=args.d, alpha=args.alpha, p=args.p, eps=args.eps,
        s=args.s, C=args.C, allow_outside_regime=args.allow_outside_regime,
    )


def _experiment(args):
    """Resolve dimensions and spike from either a preset or raw flags."""
    kind = None
    if args.instance:
        kind = _kind_from(args)
        inst = corollary_instance(kind)
        m, n, spike = inst.m, inst.n, inst.spike
    else:
        if args.n is None:
            raise UsageError("raw runs need --n (and optionally --m)")
        m, n = (args.m or args.n), args.n
        if args.spike:
            vals = args.spike * args.r if len(args.spike) == 1 else args.spike
            spike = SpikeParams(tuple(vals))
        elif args.s_norm2 is not None:
            spike = SpikeParams.uniform(args.r, args.s_norm2)
        else:
            raise UsageError("raw runs need --spike or --s-norm2")
    return kind, m, n, spike


def _gap_summary(report):
    g = report.instance.gap
    out = {
        "gap": g.as_dict(),
        "null_rate": report.null.rate,
        "null_ci": list(report.null.interval),
        "spiked_rate": report.spiked.rate,
        "spiked_ci": list(report.spiked.interval),
        "median_ratio": report.median_ratio,
        "spiked_min_exceeds_null_max": bool(report.spiked.values.min() > report.null.values.max()),
    }
    out.update(report.extras)
    return out


def _curve(args, name):
    kind, m, n, spike = _experiment(args)
    grid = args.k_grid
    if grid is None:
        grid = [k for k in default_k_grid(spike, m, n) if k * m * n <= GRID_ENTRY_BUDGET] or [1]
    cfg = ExperimentConfig(m, n, spike, tuple(grid), args.trials, args.statistic, args.seed,
                           kind=kind, per_trial_sketch=args.per_trial_sketch)
    est = sum(k * m * n * (k * 1.5e-10 + args.trials * 2e-10) for k in grid)
    _expect(est + 1)
    d = out_dir(args)
    config = _config_of(args)
    config["resolved"] = {"m": m, "n": n, "spike": list(spike.s), "k_grid": list(grid)}
    man = RunManifest(name, config, args.seed)
    man.results["note"] = "advantage lower-bounds total variation; it cannot certify it from above"
    gap_failed = False
    if kind is not None:
        if args.gap_trials < 1:
            raise UsageError("--gap-trials must be >= 1")
        rep = gap_check(kind, args.gap_trials, Rng(args.seed).child(10**9))
        man.results["gap_check"] = _gap_summary(rep)
        gap_failed = min(rep.null.rate, rep.spiked.rate) < 0.9
    report = sweep_phase_transition(cfg, threads=args.threads)
    rows, recs = [], []
    for sr in report.records:
        r = sr.record
        rows.append([r.k, r.null_rate, r.spiked_rate, r.advantage, r.ci_lo, r.ci_hi, r.statistic,
                     args.seed, r.threshold, sr.label, sr.passed, man.run_id])
        recs.append({"k": r.k, "null_rate": r.null_rate, "spiked_rate": r.spiked_rate,
                     "advantage": r.advantage, "ci_lo": r.ci_lo, "ci_hi": r.ci_hi,
                     "statistic": r.statistic, "seed": args.seed, "threshold": r.threshold,
                     "k_s4": sr.ratio, "label": sr.label, "passed": sr.passed,
                     "trials": r.trials, "run_id": man.run_id})
        print(f"  k={r.k:<6} k|s|^4={sr.ratio:<10.4g} advantage={r.advantage:.3f} "
              f"[{r.ci_lo:.3f}, {r.ci_hi:.3f}] {sr.label}"
              + ("" if sr.passed is None else (" ok" if sr.passed else " FAIL")))
    man.outputs.append(write_csv(d / f"{name}.csv", CURVE_COLUMNS, rows))
    man.outputs.append(write_jsonl(d / f"{name}.jsonl", recs))
    man.results.update(
        super_reachable=report.super_reachable,
        spans_transition=report.spans_transition,
        monotone=is_monotone(report.curve),
        critical_k=report.critical_ratio,
    )
    if name == "sweep" and not report.spans_transition:
        print("warning: k-grid does not span two decades around 1/||s||^4", file=sys.stderr)
    if report.failed or gap_failed:
        return _finish(man, d, "fail", EXIT_FAIL)
    if not report.super_reachable:
        return _finish(man, d, "unreachable", EXIT_UNREACHABLE)
    return _finish(man, d, "pass", EXIT_PASS)


def cmd_detect(args):
    return _curve(args, "detect")


def cmd_sweep(args):
    return _curve(args, "sweep")


def cmd_gap(args):
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if not args.instance:
        raise UsageError("gap needs --instance")
    kind = _kind_from(args)
    inst = corollary_instance(kind)
    _expect(args.trials * 2 * inst.m * inst.n * min(inst.m, inst.n) * 2e-9 + 1)
    d = out_dir(args)
    man = RunManifest("gap", _config_of(args), args.seed)
    rep = gap_check(kind, args.trials, Rng(args.seed))
    summary = _gap_summary(rep)
    recs = []
    for side, res, thr, rel in (("null", rep.null, inst.gap.null_upper, "<="),
                                ("spiked", rep.spiked, inst.gap.spiked_lower, ">=")):
        lo, hi = res.interval
        recs.append({"side": side, "instance": kind.tag, "norm": inst.gap.norm,
                     "threshold": thr, "successes": res.successes, "trials": res.trials,
                     "rate": res.rate, "ci_lo": lo, "ci_hi": hi,
                     "median": float(np.median(res.values)), "min": float(res.values.min()),
                     "max": float(res.values.max()), "run_id": man.run_id})
        print(f"  {side:>6}: {res.successes}/{res.trials} with {inst.gap.norm} {rel} {thr:.6g} "
              f"(Wilson 95% [{lo:.3f}, {hi:.3f}])")
    recs.append({"side": "summary", **{k: v for k, v in summary.items() if k != "gap"},
                 "run_id": man.run_id})
    print(f"  median ratio spiked/null: {summary['median_ratio']:.6g}")
    man.outputs.append(write_jsonl(d / "gap.jsonl", recs))
    man.results.update(summary)
    failed = min(rep.null.rate, rep.spiked.rate) < args.min_rate
    return _finish(man, d, "fail" if failed else "pass", EXIT_FAIL if failed else EXIT_PASS)


def cmd_dump_sketch(args):
    d = out_dir(args)
    man = RunManifest("dump-sketch", _config_of(args), args.seed)
    S = make_random_sketch(args.k, args.m, args.n, Rng(args.seed))
    path = Path(args.out) if args.out else d / f"sketch-k{args.k}-m{args.m}-n{args.n}.bin"
    man.outputs.append(dump_sketch(S, path))
    man.results["gram_residual"] = S.gram_residual()
    return _finish(man, d, "pass", EXIT_PASS)


COMMANDS = {
    "verify-lemma": cmd_verify_lemma,
    "xi": cmd_xi,
    "chi2": cmd_chi2,
    "detect": cmd_detect,
    "sweep": cmd_sweep,
    "gap": cmd_gap,
    "dump-sketch": cmd_dump_sketch,
}


def main(argv=None):
    parser, args = parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, MemoryError) as exc:
        print(f"sketchlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
