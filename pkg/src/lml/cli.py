"""Command-line entry point: ``lml {project,bench,surfaces,train}``.

Exit status is 0 on success, 1 for bad arguments or inputs outside the
domain, and 2 when a command fails at run time.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .bench import bench_lml, write_bench_csv
from .core import ConvergenceError, DomainError, SolverConfig, entropy_surface_grid, g_dual, lml_project
from .train import TrainConfig, TrainingDiverged, generate_task, train_loop

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _int_list(text: str) -> list:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}")


def _read_scores(text: str) -> np.ndarray:
    """Scores from a comma-separated list or from a file of numbers."""
    if os.path.isfile(text):
        text = Path(text).read_text()
    parts = text.replace(",", " ").split()
    try:
        x = np.array([float(p) for p in parts])
    except ValueError:
        raise UsageError(f"could not parse scores from {text!r}")
    if x.size < 2:
        raise UsageError("need at least two scores")
    return x


def _solver_cfg(args) -> SolverConfig:
    return SolverConfig(samples_per_iter=args.d, saturation_offset=args.delta, tol=args.tol)


def cmd_project(args) -> int:
    x = _read_scores(args.x)
    point = lml_project(x, args.k, _solver_cfg(args))
    out = {
        "k": point.k,
        "probs": point.probs.tolist(),
        "dual": point.dual,
        "iterations": point.iterations,
        "g_residual": g_dual(x, point.k, point.dual),
    }
    if args.oracle:
        from .oracle import reference_project

        ref = reference_project(x, args.k)
        out["oracle"] = {"probs": ref.probs.tolist(), "dual": ref.dual}
        out["max_abs_diff"] = float(np.abs(ref.probs - point.probs).max())
    json.dump(out, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def cmd_bench(args) -> int:
    workers = args.parallel or 1
    cfg = SolverConfig(workers=workers)
    records = bench_lml(_int_list(args.n_list), _int_list(args.k_list), args.trials,
                        args.batch, args.seed, cfg)
    if args.out == "-":
        write_bench_csv(records, sys.stdout, args.parallel)
    else:
        with open(args.out, "w", newline="") as f:
            write_bench_csv(records, f, args.parallel)
    return 0


def cmd_surfaces(args) -> int:
    pts, vals = entropy_surface_grid(args.n, args.k, args.penalty, args.resolution)
    f = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    try:
        w = csv.writer(f)
        w.writerow([f"y{i + 1}" for i in range(args.n)] + ["penalty"])
        for p, v in zip(pts, vals):
            w.writerow([_fmt(c) for c in p] + [_fmt(v)])
    finally:
        if f is not sys.stdout:
            f.close()
    return 0


def cmd_train(args) -> int:
    hidden = tuple(_int_list(args.hidden)) if args.hidden else ()
    cfg = TrainConfig(loss=args.loss, lr=args.lr, epochs=args.epochs,
                      batch_size=args.batch_size, seed=args.seed, hidden=hidden)
    task = generate_task(args.n, args.k, args.d_in, args.samples, args.observe_prob,
                         seed=args.seed)
    report = train_loop(task, cfg)
    summary = report.summary()
    summary["config"]["observe_prob"] = args.observe_prob
    if args.out:
        out = Path(args.out)
        report.write_csv(out)
        json_path = out.with_suffix(".json")
        with open(json_path, "w") as f:
            json.dump(summary, f, indent=2)
        summary["csv"] = str(out)
        summary["json"] = str(json_path)
    json.dump(summary, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lml", description="Limited multi-label projection tools")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("project", help="project a score vector and print JSON")
    p.add_argument("--x", required=True,
                   help="comma-separated scores or a file of numbers (use --x=-1,2 "
                        "when the first score is negative)")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--d", type=int, default=10, help="samples per iteration")
    p.add_argument("--delta", type=float, default=7.0, help="saturation offset")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--oracle", action="store_true", help="also run the bisection reference")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("bench", help="time forward/backward passes, write CSV")
    p.add_argument("--n-list", default="1000")
    p.add_argument("--k-list", default="1,5,25,50")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallel", type=int, nargs="?", const=os.cpu_count() or 2, default=None,
                   metavar="WORKERS", help="evaluate the dual samples on WORKERS threads")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("surfaces", help="entropy penalty on a grid over the polytope")
    p.add_argument("--n", type=int, required=True, choices=(3, 4))
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--penalty", choices=("binary", "shannon"), default="binary")
    p.add_argument("--resolution", type=int, default=60)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_surfaces)

    p = sub.add_parser("train", help="train on a planted top-k task")
    p.add_argument("--loss", default="lml",
                   choices=("lml", "truncated_entropy", "multilabel_truncated_entropy",
                            "sigmoid", "softmax_ce"))
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--d-in", type=int, default=10)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--observe-prob", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--hidden", default="64,64", help="hidden widths; empty for linear")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="per-epoch CSV; summary goes next to it as .json")
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, DomainError) as e:
        print(f"lml {args.command}: error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except (OSError, ConvergenceError, TrainingDiverged) as e:
        print(f"lml {args.command}: error: {e}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
