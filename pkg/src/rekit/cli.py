"""Command line entry point: ``re-kit {rsa|rsgd|fbp|ksat|fit|emit|grid}``.

Exit codes: 0 solved / completed, 1 finished cleanly with unsolved runs, 2 error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .harness import tomllib

EXIT_OK, EXIT_UNSOLVED, EXIT_ERROR = 0, 1, 2

_DEFAULT_ALGO_ARGS = {
    "rsa": dict(kind=None, K=1),
    "rsgd": dict(kind="committee", K=5),
    "fbp": dict(kind=None, K=1),
    "ksat": dict(K=4),
}


def parse_seeds(text: str) -> list:
    """"0-9", "1,4,7" or mixtures like "0-2,10"."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = (int(x) for x in part.split("-", 1))
            if hi < lo:
                raise ValueError(f"empty seed range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("no seeds given")
    return out


def parse_value(text: str):
    """A TOML scalar or array (``0.5``, ``true``, ``[1, 2]``, ``"x"``); bare words stay strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_assignments(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ValueError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v.strip())
    return out


def _add_run_args(p, algorithm):
    p.add_argument("--config", help="TOML experiment file; flags below override it")
    p.add_argument("--N", type=int, help="number of synapses / variables")
    p.add_argument("--alpha", type=float, help="patterns per synapse / clauses per variable")
    if algorithm == "ksat":
        p.add_argument("--K", type=int, help="clause length (default 4)")
        p.add_argument("--cnf", help="DIMACS CNF file instead of a random instance")
    else:
        p.add_argument("--K", type=int, help="hidden units (odd)")
        p.add_argument("--kind", choices=("perceptron", "committee", "tree"))
    p.add_argument("--seeds", help='e.g. "0-9" or "1,3,5" (default 0)')
    p.add_argument("--set", "-p", action="append", metavar="KEY=VALUE", dest="params",
                   help="algorithm parameter, repeatable (values parsed as TOML)")
    p.add_argument("--name", help="experiment directory name (default: algorithm + config hash)")
    p.add_argument("--output", help=f"output root (default ${harness.OUTPUT_ENV} or ./{harness.DEFAULT_OUTPUT})")
    p.add_argument("--workers", type=int, default=1, help="worker processes across seeds")
    p.add_argument("--force", action="store_true", help="re-run seeds that already have records")
    p.add_argument("--print-solution", action="store_true", help="print v-lines of solved K-SAT runs")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="re-kit", description="Replicated-system solvers and experiment harness.")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = dict(rsa="replicated simulated annealing", rsgd="replicated stochastic gradient descent",
                 fbp="focusing / reinforced belief propagation on networks",
                 ksat="focusing BP and decimation on K-SAT")
    for algo in harness.ALGORITHMS:
        _add_run_args(sub.add_parser(algo, help=helps[algo]), algo)
    g = sub.add_parser("grid", help="grid search over algorithm parameters")
    g.add_argument("--config", required=True, help="TOML experiment file, optionally with a [grid] table")
    g.add_argument("--grid", action="append", metavar="KEY=[V1, V2]", help="grid axis, repeatable")
    g.add_argument("--seeds")
    g.add_argument("--output")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--force", action="store_true")
    f = sub.add_parser("fit", help="fit iterations-to-solution against N")
    f.add_argument("paths", nargs="+", help="record files or experiment directories")
    f.add_argument("--form", choices=("power", "stretched"), default="power")
    f.add_argument("--min-per-n", type=int, default=3)
    e = sub.add_parser("emit", help="write a figure-ready CSV from records")
    e.add_argument("paths", nargs="+", help="record files or experiment directories")
    e.add_argument("--kind", choices=sorted(harness.CURVE_COLUMNS), required=True)
    e.add_argument("--out", required=True, help="CSV path")
    return ap


def config_from_args(args, algorithm: str) -> harness.ExperimentConfig:
    model = {}
    for k in ("N", "alpha", "K", "kind", "cnf"):
        v = getattr(args, k, None)
        if v is not None:
            model[k] = v
    over = dict(model=model, params=parse_assignments(args.params))
    for k in ("name", "output"):
        if getattr(args, k) is not None:
            over[k] = getattr(args, k)
    if args.seeds is not None:
        over["seeds"] = parse_seeds(args.seeds)
    if args.config:
        cfg = harness.load_config(args.config, over)
        if cfg.algorithm != algorithm:
            raise ValueError(f"config is for {cfg.algorithm!r}, not {algorithm!r}")
        return cfg
    if "cnf" not in model:
        for k, v in _DEFAULT_ALGO_ARGS[algorithm].items():
            model.setdefault(k, v)
        model = {k: v for k, v in model.items() if v is not None}
    return harness.ExperimentConfig(algorithm=algorithm, **harness.merge_config(dict(model={}), over))


def _line(rec) -> str:
    return (f"seed {rec.seed}: {rec.status} after {rec.iterations} iterations"
            + (f" [{rec.solution_hash}]" if rec.solution_hash else ""))


def cmd_run(args, algorithm) -> int:
    cfg = config_from_args(args, algorithm)
    records = harness.run_experiment(cfg, workers=args.workers, force=args.force)
    for rec in records:
        print(_line(rec))
        if not harness.verify_record(rec):
            print(f"seed {rec.seed}: stored solution fails verification", file=sys.stderr)
            return EXIT_ERROR
        if args.print_solution and algorithm == "ksat" and rec.solved:
            from .ksat import format_solution

            print(format_solution(rec.solution), end="")
    print(f"records in {cfg.directory()}")
    return EXIT_OK if all(r.solved for r in records) else EXIT_UNSOLVED


def cmd_grid(args) -> int:
    over = {}
    if args.seeds is not None:
        over["seeds"] = parse_seeds(args.seeds)
    if args.output is not None:
        over["output"] = args.output
    cfg = harness.load_config(args.config, over)
    grid = harness.load_grid(args.config)
    grid.update(parse_assignments(args.grid))
    for k, v in grid.items():
        if not isinstance(v, list):
            grid[k] = [v]
    report = harness.grid_search(cfg, grid, workers=args.workers, force=args.force)
    for row in report["ranking"]:
        print(f"{row['rank']:3d}  success {row['success_rate']:.2f}  mean {row['mean_iterations']}  "
              f"{json.dumps(row['point'], sort_keys=True)}")
    print(f"best: {json.dumps(report['best'], sort_keys=True)}")
    return EXIT_OK


def cmd_fit(args) -> int:
    fit = harness.fit_scaling(harness.load_records(args.paths), args.form, args.min_per_n)
    print(json.dumps(dict(form=fit.form, params=fit.params, residual=fit.residual,
                          n_points=fit.n_points, per_N=fit.log_stats), indent=1))
    return EXIT_OK


def cmd_emit(args) -> int:
    path = harness.emit_curves(harness.load_records(args.paths), args.kind, args.out)
    print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in harness.ALGORITHMS:
            return cmd_run(args, args.command)
        return dict(grid=cmd_grid, fit=cmd_fit, emit=cmd_emit)[args.command](args)
    except (ValueError, OSError, ArithmeticError) as e:
        print(f"re-kit: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
