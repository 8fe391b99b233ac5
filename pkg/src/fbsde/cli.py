"""Experiment front end: config parsing, dispatch, CSV/JSON artifacts.

Configuration is a flat key = value file (``#`` starts a comment); every
key is listed in `KNOWN_KEYS` and unknown keys are rejected with a
suggestion.  Command-line ``--set key=value`` overrides file values, and
``--seed``/``--out`` override their keys directly.  Every CSV artifact
carries a header row, one record per data point, and a trailing comment
block echoing the full configuration, which is enough to reproduce the run
exactly.  All numeric output is written with 17 significant digits.

Exit status: 0 on success, 1 on solver divergence (tolerance not reached
within m_max, or a blow-up), 2 on invalid input.
"""

from __future__ import annotations

import argparse
import difflib
import json
import math
import os
import sys
from dataclasses import dataclass, fields, replace

from .conditions import c2_discrete, check_conditions
from .model import CoefficientBounds, Grid, catalog_names, make_catalog_problem
from .oracle import (OracleDivergenceError, convergence_study_n,
                     oracle_compare, run_sine_benchmark)
from .paths import CapacityError, ForwardBlowUpError
from .solver import BackwardTargetError, SolverConfig, solve
from .model import sine_exact_y0

__all__ = ["ExperimentConfig", "ConfigError", "parse_config", "run_experiment",
           "main", "COMMANDS"]

COMMANDS = ("check", "solve", "bench-sine", "sweep-n", "sweep-m",
            "oracle-compare")

_BOUND_KEYS = ("K", "k_b", "k_f", "b_y", "sigma_x", "sigma_y", "f_x", "f_z",
               "g_x", "b_0", "sigma_0", "f_0", "g_0")


class ConfigError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: problem selection, grid, solver and oracle knobs."""

    command: str | None = None
    problem: str = "sine"
    dim: int = 1
    sigma: float = 0.1
    r: float = 0.0
    x0: float = math.pi / 2
    T: float = 1.0
    n: int = 50
    paths: int = 50_000
    seed: int = 0
    tol: float = 1e-4
    m_max: int = 50
    ridge: float = 0.0
    R: float = 10.0
    include_terminal: bool = False
    resample_per_iteration: bool = False
    stop_on_function_change: bool = False
    lambda1: float | None = None
    x_lo: float | None = None
    x_hi: float | None = None
    nodes: int = 801
    quad_order: int = 32
    inner_tol: float = 1e-10
    inner_max: int = 200
    num_seeds: int = 10
    n_list: tuple[int, ...] = (10, 20, 40, 80)
    out: str = "."
    # explicit coefficient bounds (used by `check`; None = derive from catalog)
    K: float | None = None
    k_b: float = 0.0
    k_f: float = 0.0
    b_y: float = 0.0
    sigma_x: float = 0.0
    sigma_y: float = 0.0
    f_x: float = 0.0
    f_z: float = 0.0
    g_x: float = 0.0
    b_0: float = 0.0
    sigma_0: float = 0.0
    f_0: float = 0.0
    g_0: float = 0.0

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            num_paths=self.paths, seed=self.seed, truncation=self.R,
            include_terminal=self.include_terminal, ridge=self.ridge,
            tol=self.tol, m_max=self.m_max,
            resample_per_iteration=self.resample_per_iteration,
            stop_on_function_change=self.stop_on_function_change)

    def explicit_bounds(self) -> CoefficientBounds | None:
        if self.K is None:
            return None
        return CoefficientBounds(
            K_lip=self.K, k_b=self.k_b, k_f=self.k_f, b_y=self.b_y,
            sigma_x=self.sigma_x, sigma_y=self.sigma_y, f_x=self.f_x,
            f_z=self.f_z, g_x=self.g_x, b_0=self.b_0, sigma_0=self.sigma_0,
            f_0=self.f_0, g_0=self.g_0)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if val is None:
                continue
            if isinstance(val, bool):
                rendered = "true" if val else "false"
            elif isinstance(val, tuple):
                rendered = ",".join(str(v) for v in val)
            else:
                rendered = repr(val) if isinstance(val, float) else str(val)
            lines.append(f"{f.name} = {rendered}")
        return "\n".join(lines) + "\n"


def _parse_bool(val: str) -> bool:
    low = val.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {val!r}")


def _parse_int_list(val: str) -> tuple[int, ...]:
    items = tuple(int(v.strip()) for v in val.split(",") if v.strip())
    if not items:
        raise ValueError("expected a comma-separated list of integers")
    return items


# key -> (parser, constraint predicate or None, constraint description)
KNOWN_KEYS: dict = {
    "command": (str, lambda v: v in COMMANDS, f"one of {', '.join(COMMANDS)}"),
    "problem": (str, lambda v: v in catalog_names(),
                f"one of {', '.join(catalog_names())}"),
    "dim": (int, lambda v: v >= 1, "dim >= 1"),
    "sigma": (float, lambda v: v > 0, "sigma > 0"),
    "r": (float, None, None),
    "x0": (float, None, None),
    "T": (float, lambda v: v > 0, "T > 0"),
    "n": (int, lambda v: v >= 1, "n >= 1"),
    "paths": (int, lambda v: v >= 1, "paths >= 1"),
    "seed": (int, lambda v: v >= 0, "seed >= 0"),
    "tol": (float, lambda v: v >= 0, "tol >= 0"),
    "m_max": (int, lambda v: v >= 1, "m_max >= 1"),
    "ridge": (float, lambda v: v >= 0, "ridge >= 0"),
    "R": (float, lambda v: v > 0, "R > 0"),
    "include_terminal": (_parse_bool, None, None),
    "resample_per_iteration": (_parse_bool, None, None),
    "stop_on_function_change": (_parse_bool, None, None),
    "lambda1": (float, lambda v: v > 0, "lambda1 > 0"),
    "x_lo": (float, None, None),
    "x_hi": (float, None, None),
    "nodes": (int, lambda v: v >= 2, "nodes >= 2"),
    "quad_order": (int, lambda v: v >= 8, "quad_order >= 8"),
    "inner_tol": (float, lambda v: v > 0, "inner_tol > 0"),
    "inner_max": (int, lambda v: v >= 1, "inner_max >= 1"),
    "num_seeds": (int, lambda v: v >= 1, "num_seeds >= 1"),
    "n_list": (_parse_int_list, lambda v: all(x >= 1 for x in v),
               "every n >= 1"),
    "out": (str, None, None),
    "K": (float, lambda v: v >= 0, "K >= 0"),
    "k_b": (float, None, None),
    "k_f": (float, None, None),
    "b_y": (float, lambda v: v >= 0, "b_y >= 0"),
    "sigma_x": (float, lambda v: v >= 0, "sigma_x >= 0"),
    "sigma_y": (float, lambda v: v >= 0, "sigma_y >= 0"),
    "f_x": (float, lambda v: v >= 0, "f_x >= 0"),
    "f_z": (float, lambda v: v >= 0, "f_z >= 0"),
    "g_x": (float, lambda v: v >= 0, "g_x >= 0"),
    "b_0": (float, lambda v: v >= 0, "b_0 >= 0"),
    "sigma_0": (float, lambda v: v >= 0, "sigma_0 >= 0"),
    "f_0": (float, lambda v: v >= 0, "f_0 >= 0"),
    "g_0": (float, lambda v: v >= 0, "g_0 >= 0"),
}


def _parse_one(key: str, raw: str, lineno: int | None):
    parser, predicate, constraint = KNOWN_KEYS[key]
    try:
        val = parser(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}", lineno) from None
    if predicate is not None and not predicate(val):
        raise ConfigError(f"value for {key} violates {constraint}: {raw}", lineno)
    return val


def _reject_unknown(key: str, lineno: int | None):
    hint = difflib.get_close_matches(key, KNOWN_KEYS, n=1)
    suffix = f"; did you mean {hint[0]!r}?" if hint else ""
    raise ConfigError(f"unknown key {key!r}{suffix}", lineno)


def parse_config(text: str) -> ExperimentConfig:
    """Strict parse of a flat key = value configuration."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, _, rest = line.partition("=")
        key = key.strip()
        if key not in KNOWN_KEYS:
            _reject_unknown(key, lineno)
        values[key] = _parse_one(key, rest.strip(), lineno)
    return ExperimentConfig(**values)


def apply_overrides(config: ExperimentConfig, pairs) -> ExperimentConfig:
    """Apply --set key=value overrides on top of a parsed config."""
    updates = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, rest = pair.partition("=")
        key = key.strip()
        if key not in KNOWN_KEYS:
            _reject_unknown(key, None)
        updates[key] = _parse_one(key, rest.strip(), None)
    return replace(config, **updates)


# ---------------------------------------------------------------------------
# artifact writers
# ---------------------------------------------------------------------------

def _fmt(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return f"{val:.17g}"
    return str(val)


def _write_csv(path: str, header: list[str], rows: list[list],
               config: ExperimentConfig) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
        for line in config.to_text().splitlines():
            fh.write(f"# {line.replace(' = ', ': ')}\n")


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _outpath(config: ExperimentConfig, name: str) -> str:
    os.makedirs(config.out, exist_ok=True)
    return os.path.join(config.out, name)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _resolve_bounds(config: ExperimentConfig) -> CoefficientBounds:
    explicit = config.explicit_bounds()
    if explicit is not None:
        return explicit
    _, bounds = make_catalog_problem(config.problem, config.dim, config.sigma,
                                     config.r, config.x0, config.T)
    if bounds is None:
        raise ConfigError(
            f"problem {config.problem!r} has no valid coefficient bounds; "
            "supply them explicitly (keys K, k_b, ...)")
    return bounds


def _cmd_check(config: ExperimentConfig) -> int:
    bounds = _resolve_bounds(config)
    report = check_conditions(bounds, config.T)
    text = report.to_text()
    if config.lambda1 is not None:
        c2d = c2_discrete(bounds, config.n, config.T, config.lambda1,
                          report.L1, report.L1)
        text += (f"\n{'discrete c2':<22}{c2d:.17g}"
                 f"  (n = {config.n}, lambda1 = {config.lambda1:g})")
    print(text)
    payload = report.to_json_dict()
    print(json.dumps(payload))
    _write_json(_outpath(config, "check.json"), payload)
    verdict = "all hold" if (report.condition_3_2_holds
                             and report.condition_4_2_holds
                             and report.condition_5_1_holds) else "some fail"
    print(f"check: {verdict} "
          f"(3.2={report.condition_3_2_holds} 4.2={report.condition_4_2_holds} "
          f"5.1={report.condition_5_1_holds} rate={report.predicted_rate:.6g})")
    return 0


def _cmd_solve(config: ExperimentConfig) -> int:
    problem, bounds = make_catalog_problem(config.problem, config.dim,
                                           config.sigma, config.r, config.x0,
                                           config.T)
    grid = Grid(n=config.n, horizon_T=problem.horizon_T)
    estimate, report = solve(problem, grid, config.solver_config(),
                             bounds=bounds)
    _write_json(_outpath(config, "solve.json"), report.to_json_dict())
    _write_json(_outpath(config, "estimate.json"), estimate.to_json_dict())
    print(f"solve: Y0={estimate.y0:.17g} m_stop={report.m_stop} "
          f"({report.stop_reason})")
    if report.stop_reason != "tolerance":
        print(f"solve: divergence -- tolerance {config.tol:g} not reached "
              f"within m_max={config.m_max}", file=sys.stderr)
        return 1
    return 0


def _cmd_bench_sine(config: ExperimentConfig) -> int:
    grid = Grid(n=config.n, horizon_T=config.T)
    result = run_sine_benchmark(config.dim, config.sigma, config.r, grid,
                                config.solver_config(), config.x0)
    _write_json(_outpath(config, "bench_sine.json"), result.to_json_dict())
    times = grid.times
    rows = [[i, times[i], result.mse_curve[i]] for i in range(grid.n + 1)]
    _write_csv(_outpath(config, "bench_sine_mse.csv"), ["i", "t_i", "mse"],
               rows, config)
    print(f"bench-sine: Y0={result.y0_estimate:.17g} "
          f"exact={result.y0_exact:.17g} abs_error={result.abs_error:.6g} "
          f"m_stop={result.m_stop}")
    return 0 if result.report.stop_reason == "tolerance" else 1


def _cmd_sweep_n(config: ExperimentConfig) -> int:
    study = convergence_study_n(config.dim, config.sigma, config.r,
                                config.n_list, config.solver_config(),
                                num_seeds=config.num_seeds, T=config.T)
    rows = [[row["n"], row["abs_error"], row["m_stop"],
             row["slope_so_far"] if row["slope_so_far"] is not None else "nan"]
            for row in study.rows]
    _write_csv(_outpath(config, "sweep_n.csv"),
               ["n", "abs_error", "m_stop", "slope_so_far"], rows, config)
    _write_json(_outpath(config, "sweep_n.json"), study.to_json_dict())
    slope = "absent" if study.slope is None else f"{study.slope:.6g}"
    print(f"sweep-n: slope={slope}")
    return 0


def _cmd_sweep_m(config: ExperimentConfig) -> int:
    problem, bounds = make_catalog_problem(config.problem, config.dim,
                                           config.sigma, config.r, config.x0,
                                           config.T)
    grid = Grid(n=config.n, horizon_T=problem.horizon_T)
    estimate, report = solve(problem, grid, config.solver_config(),
                             bounds=bounds)
    exact = (sine_exact_y0(config.dim, config.r, config.T)
             if config.problem == "sine" else math.nan)
    rows = []
    for m, y0 in enumerate(report.y0_per_iteration, start=1):
        delta = (y0 - report.y0_per_iteration[m - 2]) if m >= 2 else math.nan
        rows.append([m, y0, abs(y0 - exact), delta])
    _write_csv(_outpath(config, "sweep_m.csv"),
               ["m", "y0", "abs_error", "delta_y0"], rows, config)
    print(f"sweep-m: Y0={estimate.y0:.17g} after m={report.m_stop} "
          f"({report.stop_reason})")
    return 0


def _cmd_oracle_compare(config: ExperimentConfig) -> int:
    problem, _ = make_catalog_problem(config.problem, config.dim, config.sigma,
                                      config.r, config.x0, config.T)
    grid = Grid(n=config.n, horizon_T=problem.horizon_T)
    result = oracle_compare(problem, grid, config.solver_config(),
                            x_lo=config.x_lo, x_hi=config.x_hi,
                            node_count=config.nodes,
                            quad_order=config.quad_order,
                            inner_tol=config.inner_tol,
                            inner_max=config.inner_max,
                            num_seeds=config.num_seeds)
    _write_json(_outpath(config, "oracle_compare.json"), result.to_json_dict())
    print(f"oracle-compare: |Y0-oracle|={result.abs_difference:.6g} "
          f"tolerance={result.tolerance:.6g} "
          f"within={result.within_tolerance}")
    return 0


_DISPATCH = {
    "check": _cmd_check,
    "solve": _cmd_solve,
    "bench-sine": _cmd_bench_sine,
    "sweep-n": _cmd_sweep_n,
    "sweep-m": _cmd_sweep_m,
    "oracle-compare": _cmd_oracle_compare,
}


def run_experiment(config: ExperimentConfig) -> int:
    """Dispatch one experiment; returns the process exit status."""
    if config.command not in _DISPATCH:
        raise ConfigError(f"missing or unknown command: {config.command!r}")
    try:
        return _DISPATCH[config.command](config)
    except (ForwardBlowUpError, BackwardTargetError, OracleDivergenceError) as exc:
        print(f"{config.command}: diverged: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{config.command}: I/O failure: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbsde",
        description="Coupled FBSDE solver experiments: solve by iterated "
                    "least-squares Monte Carlo regression, check analytic "
                    "convergence conditions, and benchmark against closed "
                    "forms and a quadrature oracle.",
        epilog="Config keys and defaults: "
               + "; ".join(f"{f.name}={getattr(ExperimentConfig(), f.name)}"
                           for f in fields(ExperimentConfig)
                           if f.name != "command"))
    sub = parser.add_subparsers(dest="command")
    for name, helptext in (
            ("check", "evaluate the convergence conditions for a bound set"),
            ("solve", "run the solver on a catalog problem"),
            ("bench-sine", "solve the sine benchmark and compare to its "
                           "closed form"),
            ("sweep-n", "error versus number of time steps"),
            ("sweep-m", "per-iteration estimates of one run"),
            ("oracle-compare", "cross-seed solver estimates against the "
                               "quadrature oracle (1-D)")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", help="path to a key = value config file")
        sp.add_argument("--seed", type=int, help="override the seed")
        sp.add_argument("--out", help="output directory (default: .)")
        sp.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage()
        return 2
    try:
        if args.config:
            with open(args.config) as fh:
                config = parse_config(fh.read())
        else:
            config = ExperimentConfig()
        config = apply_overrides(config, args.set)
        updates = {"command": args.command}
        if args.seed is not None:
            updates["seed"] = args.seed
        if args.out is not None:
            updates["out"] = args.out
        config = replace(config, **updates)
        return run_experiment(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    except (KeyError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
