"""Command line entry point.

Settings are layered: built-in defaults, then a JSON config file given with
``--config``, then explicit command line flags.  A config file holds the
fields of :class:`apdmmo.harness.RunConfig`, for example::

    {"r": 0.375, "train": {"epochs": 200}, "cluster": {"space": "raw"}}
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .benchmark import load_problem_table, make_problem
from .harness import (
    RATIO_SWEEP, RunConfig, emit_surrogate_grid, run_apdmmo, run_suite, suite_table,
)

ABLATION_VARIANTS = ("FULL", "NO_FPD", "NO_PLS")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with run settings")
    common.add_argument("--problem", nargs="+", help="problem ids, e.g. F1 F2")
    common.add_argument("--seed", type=int, help="first run seed")
    common.add_argument("--runs", type=int, help="repetitions per configuration")
    common.add_argument("--r", type=float, help="fraction of the budget used for training")
    common.add_argument("--n-starts", type=int, help="number of descent starts")
    common.add_argument("--variant", nargs="+", help="FULL, NO_FPD, NO_PLS, P1, P5, M1, M5, S1, S5")
    common.add_argument("--out", type=Path, help="output file (run, grid) or directory")
    common.add_argument("--paper-scale", action="store_true", default=None,
                        help="use the published network size and descent settings")
    common.add_argument("--problem-table", type=Path, help="override file for the problem table")
    common.add_argument("--quiet", action="store_true", help="no progress lines on stderr")

    parser = argparse.ArgumentParser(prog="apdmmo", description="Surrogate-guided search for all global optima of benchmark functions.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="one run, JSON report")
    sub.add_parser("suite", parents=[common], help="several problems, PR/SR table")
    sub.add_parser("ablate", parents=[common], help="compare stage variants")
    sub.add_parser("ratio-sweep", parents=[common], help="vary r over 1/8 .. 7/8")
    grid = sub.add_parser("grid", parents=[common], help="train a surrogate and dump it on a grid")
    grid.add_argument("--resolution", type=int, default=101)
    return parser


def _base_config(args) -> RunConfig:
    data = {}
    if args.config is not None:
        data = json.loads(args.config.read_text())
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
    data.pop("runs", None)
    flags = {"seed": args.seed, "r": args.r, "paper_scale": args.paper_scale}
    data.update({k: v for k, v in flags.items() if v is not None})
    if args.problem_table is not None:
        data["problem_table"] = str(args.problem_table)
    if args.n_starts is not None:
        data["descent"] = {**data.get("descent", {}), "n_starts": args.n_starts}
    return RunConfig.from_dict(data)


def _runs(args) -> int:
    if args.runs is not None:
        return args.runs
    if args.config is not None:
        return int(json.loads(args.config.read_text()).get("runs", 1))
    return 1


def _problems(args, base: RunConfig, default=("F1",)):
    if args.problem:
        return args.problem
    return [base.problem] if base.problem else list(default)


def _progress(quiet):
    if quiet:
        return None

    def show(rep):
        key = "0.0001" if "0.0001" in rep.npf else next(iter(rep.npf))
        print(f"{rep.problem} {rep.variant} r={rep.config['r']:.3f} seed={rep.seed}: "
              f"NPF@{key}={rep.npf[key]}/{rep.nkp}  archive={rep.archive_size}  "
              f"fes={rep.ledger['total_fes']}", file=sys.stderr, flush=True)
    return show


def _emit_table(rows, out: Path | None):
    print(suite_table(rows, "text"), end="")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(suite_table(rows, "csv"))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        base = _base_config(args)
        if args.problem_table is not None:
            load_problem_table(args.problem_table)  # fail early on a broken file
        runs = _runs(args)
        if runs < 1:
            raise ValueError("--runs must be at least 1")
        variants = args.variant
        problems = _problems(args, base)

        if args.command == "run":
            cfg = replace(base, problem=problems[0], variant=(variants or [base.variant])[0])
            report = run_apdmmo(cfg)
            text = report.to_json(indent=1)
            if args.out is not None:
                args.out.parent.mkdir(parents=True, exist_ok=True)
                args.out.write_text(text)
            else:
                print(text)
        elif args.command in ("suite", "ablate"):
            if variants is None:
                variants = list(ABLATION_VARIANTS) if args.command == "ablate" else [base.variant]
            configs = [replace(base, problem=p, variant=v) for p in problems for v in variants]
            rows, _ = run_suite(configs, runs, args.out, _progress(args.quiet))
            _emit_table(rows, args.out)
        elif args.command == "ratio-sweep":
            v = (variants or [base.variant])[0]
            configs = [replace(base, problem=p, variant=v, r=r) for p in problems
                       for r in RATIO_SWEEP]
            rows, _ = run_suite(configs, runs, args.out, _progress(args.quiet))
            _emit_table(rows, args.out)
        elif args.command == "grid":
            cfg = replace(base, problem=problems[0], variant=(variants or [base.variant])[0])
            if cfg.variant == "NO_FPD":
                raise ValueError("the NO_FPD variant trains no surrogate")
            table = None if cfg.problem_table is None else load_problem_table(cfg.problem_table)
            if make_problem(cfg.problem, cfg.problem_seed, table)[0].dim > 2:
                raise ValueError("surrogate grids are only available for 1D and 2D problems")
            report, model = run_apdmmo(cfg, return_model=True)
            out = args.out or Path(f"{cfg.problem}_grid.txt")
            emit_surrogate_grid(model, model.norm.x_center - model.norm.x_half,
                                model.norm.x_center + model.norm.x_half, args.resolution, out)
            print(f"wrote {out}", file=sys.stderr)
    except (ValueError, KeyError, OSError, ArithmeticError, AssertionError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"apdmmo: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
