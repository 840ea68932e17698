"""Command-line entry point: solve, sweep, validate and render grid instances.

Exit codes: 0 success, 1 infeasible instance, 2 solver failure, 3 bad config.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import baselines, gridworld, harness
from .cmdp import validate
from .lyapunov import AUX_COSTS

EXIT_OK, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2, 3


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    overrides = {}
    if args.rho is not None:
        overrides["density"] = args.rho
    if args.d0 is not None:
        overrides["threshold"] = args.d0
    if args.seed is not None:
        overrides["seed"] = args.seed
    grid = dataclasses.replace(cfg.grid, **overrides)
    changes = {"grid": grid}
    if args.mode is not None:
        changes["mode"] = args.mode
    if args.aux_cost is not None:
        changes["aux_cost"] = args.aux_cost
    if getattr(args, "solver", None) and args.command == "sweep":
        changes["solvers"] = [args.solver]
    if args.rho is not None and args.command == "sweep":
        changes["rhos"] = [args.rho]
    if args.seed is not None and args.command == "sweep":
        changes["trials"], changes["seeds"] = 1, [args.seed]
    return dataclasses.replace(cfg, **changes)


def _instance(cfg, check: bool = True):
    try:
        grid = gridworld.generate(cfg.grid)
        return grid, gridworld.compile_cmdp(grid, cfg.grid, cfg.mode, check=check)
    except ValueError as exc:
        raise harness.ConfigError(str(exc)) from exc


def cmd_solve(args, cfg) -> int:
    _, mdp = _instance(cfg)
    baseline = baselines.unconstrained_solve(mdp, "min_constraint")
    if not baseline.feasible:
        print(f"infeasible instance: least constraint value {baseline.constraint:.6g} > d0={mdp.threshold:g}")
        return EXIT_INFEASIBLE
    try:
        report = harness.run_solver(mdp, args.solver, baseline.final_policy, cfg.aux_cost)
    except Exception as exc:
        print(f"solver {args.solver} failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    summary = {k: report.to_dict()[k] for k in ("solver", "objective", "constraint", "threshold", "feasible",
                                                "iterations", "flags")}
    print(json.dumps(summary, indent=1))
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    return EXIT_OK if report.feasible else EXIT_SOLVER


def cmd_sweep(args, cfg) -> int:
    rows = harness.run_experiment(cfg)
    summaries = harness.aggregate(rows)
    print(harness.format_summary(summaries))
    out = args.out or cfg.csv_path
    if out:
        harness.emit(rows, summaries, "json" if str(out).endswith(".json") else "csv", out)
    if cfg.json_path and not args.out:
        harness.emit(rows, summaries, "json", cfg.json_path)
    return EXIT_SOLVER if any(r.iterations < 0 for r in rows) else EXIT_OK


def cmd_validate(args, cfg) -> int:
    _, mdp = _instance(cfg, check=False)
    diag = validate(mdp)
    print(json.dumps(diag.to_dict(), indent=1))
    return EXIT_OK if diag.ok else EXIT_INFEASIBLE


def cmd_render(args, cfg) -> int:
    grid, mdp = _instance(cfg)
    policy = None
    if args.solver:
        report = harness.run_solver(mdp, args.solver, aux_cost=cfg.aux_cost)
        policy = gridworld.cell_policy(mdp, grid, report.final_policy)
    print(gridworld.render(grid, policy))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "validate": cmd_validate, "render": cmd_render}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lyapcmdp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("solve", "run one solver on one grid instance"),
                            ("sweep", "density sweep over seeds and solvers"),
                            ("validate", "instance diagnostics"),
                            ("render", "ASCII map of an instance")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--solver", choices=harness.SOLVERS, default="spi" if name == "solve" else None)
        p.add_argument("--rho", type=float, help="obstacle density")
        p.add_argument("--d0", type=float, help="constraint threshold")
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=gridworld.MODES)
        p.add_argument("--aux-cost", choices=sorted(AUX_COSTS))
        p.add_argument("--out", help="output path (.csv or .json for sweep)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
    except (harness.ConfigError, ValueError, TypeError) as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args, cfg)
    except harness.ConfigError as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
