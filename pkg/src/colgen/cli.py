"""Command-line entry point.

Exit status: 0 when every run ended with a certificate, 2 when an iteration
or time cap stopped a run, 1 on bad input.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench
from . import io as cio
from .driver import CERTIFIED, ColgenConfig, run_colgen_ce, run_colgen_l2
from .errors import ColgenError, FormatError
from .pricing import PricingConfig
from .tensor import DenseTensor3

EXIT_OK, EXIT_INPUT, EXIT_CAP = 0, 1, 2
SIMPLEX_TOL = 1e-8


def _run_options(p: argparse.ArgumentParser):
    p.add_argument("--out", required=True, help="result JSON path")
    p.add_argument("--trace", required=True, help="trace CSV path")
    p.add_argument("--restarts", type=int, default=10, help="pricing restarts per round (default 10)")
    p.add_argument("--seed", type=int, default=0, help="pricing seed (default 0)")
    p.add_argument("--time-limit-s", type=float, default=300.0, help="wall-clock cap in seconds")
    p.add_argument("--max-iters", type=int, default=500, help="outer iteration cap")
    p.add_argument("--nonsym", action="store_true", help="price non-symmetric rank-1 atoms")
    p.add_argument(
        "--no-timing", action="store_true",
        help="write 0 for elapsed_s so traces are byte-reproducible",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="colgen", description="Column generation for sparse tensor models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-l2", help="L2 + L1 fit of a tensor with rank-1 atoms")
    p.add_argument("--input", required=True, help="tensor JSON")
    p.add_argument("--ell", type=float, required=True, help="per-atom L1 cost")
    _run_options(p)

    p = sub.add_parser("solve-ce", help="cross-entropy + L1 fit of a probability tensor")
    p.add_argument("--input", required=True, help="tensor JSON (entries sum to 1)")
    p.add_argument("--ell-a", type=float, required=True, help="per-atom L1 cost")
    _run_options(p)

    p = sub.add_parser("fit-gmm", help="fixed-width Gaussian mixture on weighted 1-d points")
    p.add_argument("--points", required=True, help="CSV with header position,weight")
    p.add_argument("--sigma", type=float, required=True, help="component width")
    p.add_argument("--ell-a", type=float, required=True, help="per-atom L1 cost")
    _run_options(p)

    p = sub.add_parser("bench", help="synthetic benchmark; writes trace.csv, summary.csv, metadata.json")
    p.add_argument("--family", choices=("one", "two"), required=True)
    p.add_argument("--preset", choices=("paper", "desk"), default="desk")
    p.add_argument("--instances", type=int, default=None, help="override the preset instance count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: logical cores)")
    p.add_argument("--regs", type=float, nargs="+", default=None, help="override the regularizer grid")
    p.add_argument("--time-limit-s", type=float, default=None, help="override the preset time cap")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--no-timing", action="store_true")
    return parser


def _config(args, family: str, reg: float, **extra) -> ColgenConfig:
    return ColgenConfig(
        family=family,
        reg=reg,
        max_iters=args.max_iters,
        time_limit_s=args.time_limit_s,
        pricing=PricingConfig(restarts=args.restarts, seed=args.seed),
        nonsym=args.nonsym,
        timing=not args.no_timing,
        **extra,
    )


def _finish(result, cfg, args) -> int:
    cio.write_result(args.out, cio.result_document(result, cfg))
    cio.write_trace(args.trace, result.trace)
    return EXIT_OK if result.termination == CERTIFIED else EXIT_CAP


def _symmetry_check(T: DenseTensor3, args, path):
    if not args.nonsym and not T.symmetric:
        raise FormatError(f"{path}: tensor is not flagged symmetric; pass --nonsym for general tensors")


def cmd_solve_l2(args) -> int:
    T = cio.read_tensor(args.input)
    _symmetry_check(T, args, args.input)
    cfg = _config(args, "one", args.ell)
    return _finish(run_colgen_l2(T, cfg), cfg, args)


def cmd_solve_ce(args) -> int:
    T = cio.read_tensor(args.input)
    _symmetry_check(T, args, args.input)
    total = float(T.data.sum())
    if T.data.min() < -SIMPLEX_TOL or abs(total - 1.0) > SIMPLEX_TOL:
        raise FormatError(
            f"{args.input}: field 'data' is not a distribution (min {T.data.min():.3g}, sum {total:.17g})"
        )
    T = DenseTensor3(T.dims, np.maximum(T.data, 0.0) / np.maximum(T.data, 0.0).sum(), symmetric=T.symmetric)
    cfg = _config(args, "two", args.ell_a)
    return _finish(run_colgen_ce(T, cfg), cfg, args)


def cmd_fit_gmm(args) -> int:
    points = cio.read_points(args.points)
    if not points.weights.sum() > 0:
        raise FormatError(f"{args.points}: weights sum to zero")
    cfg = _config(args, "two", args.ell_a, sigma=args.sigma)
    return _finish(run_colgen_ce(points, cfg), cfg, args)


def cmd_bench(args) -> int:
    preset = bench.PRESETS[(args.family, args.preset)]
    specs = bench.sample_specs(args.family, args.preset, args.instances, args.seed)
    regs = tuple(args.regs) if args.regs else preset.regs
    cfg = ColgenConfig(
        family=args.family,
        time_limit_s=args.time_limit_s or preset.time_limit_s,
        pricing=PricingConfig(restarts=args.restarts, seed=args.seed),
        timing=not args.no_timing,
    )
    jobs = args.jobs or bench.default_jobs()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traces, summaries = [], []
    for run in bench.run_bench(args.family, specs, regs, cfg, jobs=jobs):
        traces.extend(run.trace)
        summaries.append(run.summary)
    cio.write_csv(out / "trace.csv", bench.TRACE_FIELDS, traces)
    cio.write_csv(out / "summary.csv", bench.SUMMARY_FIELDS, summaries)
    meta = {
        "family": args.family,
        "preset": args.preset,
        "instances": len(specs),
        "seed": args.seed,
        "regs": list(regs),
        "time_limit_s": cfg.time_limit_s,
        "restarts": args.restarts,
        "noise_model": bench.NOISE_MODEL[args.family],
        "ground_truth_smoothing": bench.GT_SMOOTHING if args.family == "two" else 0.0,
    }
    (out / "metadata.json").write_text(cio.dumps(meta) + "\n")
    return EXIT_OK if all(s["termination"] == CERTIFIED for s in summaries) else EXIT_CAP


COMMANDS = {"solve-l2": cmd_solve_l2, "solve-ce": cmd_solve_ce, "fit-gmm": cmd_fit_gmm, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (ColgenError, OSError) as exc:
        print(f"colgen: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
