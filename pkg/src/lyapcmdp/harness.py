"""Seeded obstacle-density sweeps over all solvers, with t-interval summaries."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import baselines, gridworld, safe_dp
from .cmdp import TransientCmdp
from .lyapunov import AUX_COSTS

log = logging.getLogger(__name__)

SOLVERS = ("spi", "svi", "lagrangian", "dual_lp", "stepwise", "supermartingale", "min_cost", "min_constraint")
DEFAULT_SOLVERS = ("spi", "svi", "lagrangian", "dual_lp", "stepwise", "supermartingale", "min_constraint")
CSV_FIELDS = ("solver", "rho", "seed", "objective", "constraint", "feasible", "iterations", "wall_time_ms")
CI_LEVEL = 0.80


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    grid: gridworld.GridSpec = field(default_factory=lambda: gridworld.GridSpec(width=10, height=10))
    rhos: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
    solvers: list = field(default_factory=lambda: list(DEFAULT_SOLVERS))
    trials: int = 20
    seeds: list | None = None  # defaults to range(trials)
    mode: str = "assume_proper"
    aux_cost: str = "constant"
    csv_path: str | None = None
    json_path: str | None = None

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = gridworld.GridSpec.from_dict(self.grid)
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.solvers:
            raise ConfigError("solver list is empty")
        unknown = [s for s in self.solvers if s not in SOLVERS]
        if unknown:
            raise ConfigError(f"unknown solvers {unknown}; choose from {list(SOLVERS)}")
        if self.mode not in gridworld.MODES:
            raise ConfigError(f"mode must be one of {gridworld.MODES}")
        if self.aux_cost not in AUX_COSTS:
            raise ConfigError(f"aux_cost must be one of {sorted(AUX_COSTS)}")
        if any(not 0.0 <= r < 1.0 for r in self.rhos):
            raise ConfigError("densities must lie in [0, 1)")
        if self.seeds is not None and len(self.seeds) != self.trials:
            raise ConfigError("seeds must list one seed per trial")

    @property
    def seed_list(self) -> list:
        return list(self.seeds) if self.seeds is not None else list(range(self.trials))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["grid"] = self.grid.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - names
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)


@dataclass(frozen=True)
class ResultRow:
    solver: str
    rho: float
    seed: int
    objective: float
    constraint: float
    feasible: bool
    iterations: int
    wall_time_ms: float


def run_solver(mdp: TransientCmdp, solver: str, baseline=None, aux_cost: str = "constant") -> safe_dp.SolveReport:
    """Run one named solver; ``baseline`` seeds the safe solvers and the surrogate fallbacks."""
    if solver in ("min_cost", "min_constraint"):
        return baselines.unconstrained_solve(mdp, solver)
    if solver == "lagrangian":
        return baselines.lagrangian_solve(mdp)
    if solver == "dual_lp":
        return baselines.dual_lp_solve(mdp)
    if baseline is None:
        baseline = baselines.unconstrained_solve(mdp, "min_constraint").final_policy
    if solver == "spi":
        return safe_dp.spi(mdp, baseline, safe_dp.SafeDpOptions(aux_cost=aux_cost))
    if solver == "svi":
        return safe_dp.svi(mdp, baseline, safe_dp.SafeDpOptions(aux_cost=aux_cost))
    if solver == "stepwise":
        return baselines.stepwise_solve(mdp, fallback_policy=baseline)
    if solver == "supermartingale":
        return baselines.supermartingale_solve(mdp, fallback_policy=baseline)
    raise ConfigError(f"unknown solver {solver!r}")


def _row(solver, rho, seed, report, wall_ms) -> ResultRow:
    return ResultRow(solver, float(rho), int(seed), float(report.objective), float(report.constraint),
                     report.feasible, int(report.iterations), wall_ms)


def run_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    """One row per (density, seed, solver); a solver that raises yields a failed row (iterations -1)."""
    rows = []
    for rho in cfg.rhos:
        for seed in cfg.seed_list:
            spec = dataclasses.replace(cfg.grid, density=float(rho), seed=int(seed))
            _, mdp = gridworld.build(spec, cfg.mode)
            baseline = baselines.unconstrained_solve(mdp, "min_constraint").final_policy
            for solver in cfg.solvers:
                t0 = time.perf_counter()
                try:
                    report = run_solver(mdp, solver, baseline, cfg.aux_cost)
                except Exception as exc:  # recorded, the sweep goes on
                    log.warning("%s failed at rho=%g seed=%d: %s", solver, rho, seed, exc)
                    rows.append(ResultRow(solver, float(rho), int(seed), math.nan, math.nan, False, -1,
                                          (time.perf_counter() - t0) * 1e3))
                    continue
                rows.append(_row(solver, rho, seed, report, (time.perf_counter() - t0) * 1e3))
            log.info("rho=%g seed=%d done", rho, seed)
    return rows


@dataclass(frozen=True)
class Summary:
    solver: str
    rho: float
    n: int
    objective_mean: float
    objective_lo: float
    objective_hi: float
    constraint_mean: float
    constraint_lo: float
    constraint_hi: float
    feasible_rate: float


def t_interval(values, level: float = CI_LEVEL) -> tuple[float, float, float]:
    """Mean and two-sided t confidence interval; a single value gives a zero-width interval."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return math.nan, math.nan, math.nan
    mean = float(np.mean(x))
    if x.size < 2:
        return mean, mean, mean
    half = float(stats.t.ppf(0.5 + level / 2, x.size - 1) * np.std(x, ddof=1) / math.sqrt(x.size))
    return mean, mean - half, mean + half


def aggregate(rows, level: float = CI_LEVEL) -> list[Summary]:
    cells: dict = {}
    for row in rows:
        cells.setdefault((row.solver, row.rho), []).append(row)
    out = []
    for (solver, rho), group in cells.items():
        obj = t_interval([r.objective for r in group], level)
        con = t_interval([r.constraint for r in group], level)
        rate = sum(r.feasible for r in group) / len(group)
        out.append(Summary(solver, rho, len(group), *obj, *con, rate))
    return out


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, k)) for k in CSV_FIELDS])


def read_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return [ResultRow(r["solver"], float(r["rho"]), int(r["seed"]), float(r["objective"]),
                          float(r["constraint"]), r["feasible"] == "true", int(r["iterations"]),
                          float(r["wall_time_ms"])) for r in reader]


def _nan_to_none(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def emit(rows, summaries, fmt: str, path) -> list[Path]:
    """Write rows (and summaries alongside) as CSV or JSON; returns the paths written."""
    path = Path(path)
    if fmt == "csv":
        write_csv(rows, path)
        summary_path = path.with_name(path.stem + ".summary.csv")
        with open(summary_path, "w", newline="") as fh:
            names = [f.name for f in dataclasses.fields(Summary)]
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names)
            for s in summaries:
                writer.writerow([_fmt(getattr(s, k)) for k in names])
        return [path, summary_path]
    if fmt == "json":
        doc = {
            "rows": [{k: _nan_to_none(v) for k, v in dataclasses.asdict(r).items()} for r in rows],
            "summary": [{k: _nan_to_none(v) for k, v in dataclasses.asdict(s).items()} for s in summaries],
        }
        path.write_text(json.dumps(doc, indent=1) + "\n")
        return [path]
    raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")


def format_summary(summaries) -> str:
    lines = [f"{'solver':<16}{'rho':>5}{'n':>4}{'objective (80% CI)':>36}{'constraint':>12}{'feasible':>10}"]
    for s in sorted(summaries, key=lambda s: (s.rho, s.solver)):
        ci = f"{s.objective_mean:10.2f} [{s.objective_lo:9.2f}, {s.objective_hi:9.2f}]"
        lines.append(f"{s.solver:<16}{s.rho:>5.2f}{s.n:>4}{ci:>36}{s.constraint_mean:>12.3f}{s.feasible_rate:>10.2f}")
    return "\n".join(lines)
