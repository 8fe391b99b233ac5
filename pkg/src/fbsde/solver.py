"""Iterated forward simulation and backward regression.

One iteration maps the previous value-function estimate to a new one:

  1. forward pass: simulate all paths with the coupled coefficients
     evaluated at the previous estimate (the very first iteration uses the
     zero function);
  2. backward pass, for i = n-1 down to 1: regress the control targets
     (1/h) Y_{i+1} dW_{i+1} on the basis at X_i (one fit per Brownian
     component, sharing the factorization), then regress the value targets
     f(t_i, X_i, Y_{i+1}, Z_i) h + Y_{i+1} on the same design -- the value
     fit consumes the freshly fitted Z_i, so the order is fixed;
  3. at i = 0 there is no regression (all paths sit at x0): Z_0 is the
     sample mean of (1/h) Y_1 dW_1 and Y_0 the sample mean of
     Y_1 + f(0, x0, Y_1, Z_0) h with the common Z_0 inside f.

The same increment tensor is reused across iterations by default, so
consecutive Y_0 estimates share their Monte Carlo noise and their absolute
difference is a usable stopping statistic; iteration stops when it drops
below `tol` or after `m_max` rounds.  `resample_per_iteration` switches to
fresh increments per round (the stopping difference then floors at the
Monte Carlo error).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .conditions import ConditionReport, check_conditions
from .model import CoefficientBounds, FbsdeProblem, Grid
from .paths import (DEFAULT_MAX_ENTRIES, IncrementSet, PathEnsemble,
                    forward_paths, generate_increments)
from .regression import (BasisSet, LeastSquaresFactorization, RegressionFit,
                         design_matrix, fit_to_json_dict, make_basis)

__all__ = [
    "SolverConfig",
    "ValueFunctionEstimate",
    "IterationReport",
    "BackwardTargetError",
    "backward_pass",
    "solve",
    "evaluate_solution",
    "simulate_solution_paths",
]


class BackwardTargetError(RuntimeError):
    """A regression target became non-finite."""

    def __init__(self, step: int, path: int):
        self.step = step
        self.path = path
        super().__init__(f"non-finite regression target at step {step}, path {path}")


@dataclass(frozen=True)
class SolverConfig:
    """Tunables of one solver run; defaults follow the benchmark setup."""

    num_paths: int = 50_000
    seed: int = 0
    truncation: float = 10.0
    include_terminal: bool = False
    ridge: float = 0.0
    tol: float = 1e-4
    m_max: int = 50
    resample_per_iteration: bool = False
    stop_on_function_change: bool = False
    max_entries: int = DEFAULT_MAX_ENTRIES


@dataclass(eq=False)
class ValueFunctionEstimate:
    """Per-step regression fits representing one iterate (u, v).

    At i = n the terminal rule applies symbolically: u = g exactly and
    v = 0.  At i = 0 the estimate is the scalar pair (y0, z0).  Interior
    steps hold one value fit and dim_w control fits over the shared basis,
    so evaluation inherits the basis' Lipschitz continuity.
    """

    problem: FbsdeProblem
    grid: Grid
    basis: BasisSet
    u_fits: dict[int, RegressionFit]
    v_fits: dict[int, list[RegressionFit]]
    y0: float
    z0: np.ndarray
    iteration_index: int

    def u_values(self, i: int, x: np.ndarray) -> np.ndarray:
        """Value estimate at step i for points x of shape (N, dim_x)."""
        n = self.grid.n
        if i == 0:
            return np.full(x.shape[0], self.y0)
        if i == n:
            return np.asarray(self.problem.terminal(x), dtype=float)
        return design_matrix(self.basis, x) @ self.u_fits[i].coefficients

    def v_values(self, i: int, x: np.ndarray) -> np.ndarray:
        """Control estimate at step i, shape (N, dim_w)."""
        n = self.grid.n
        if i == 0:
            return np.broadcast_to(self.z0, (x.shape[0], self.problem.dim_w)).copy()
        if i == n:
            return np.zeros((x.shape[0], self.problem.dim_w))
        des = design_matrix(self.basis, x)
        coefs = np.column_stack([f.coefficients for f in self.v_fits[i]])
        return des @ coefs

    def to_json_dict(self) -> dict:
        return {
            "n": self.grid.n,
            "h": self.grid.h,
            "iteration_index": self.iteration_index,
            "basis": {
                "dimension": self.basis.dimension,
                "truncation": self.basis.truncation,
                "include_terminal": self.basis.include_terminal,
                "count": self.basis.count,
            },
            "y0": self.y0,
            "z0": [float(z) for z in self.z0],
            "u_fits": [fit_to_json_dict(self.u_fits[i], i)
                       for i in sorted(self.u_fits)],
            "v_fits": [{"step_index": i,
                        "components": [fit_to_json_dict(f, i)
                                       for f in self.v_fits[i]]}
                       for i in sorted(self.v_fits)],
        }


@dataclass
class IterationReport:
    """Per-iteration record of one solver run."""

    y0_per_iteration: list[float]
    z0_final: np.ndarray
    m_stop: int
    stop_reason: str  # "tolerance" | "max_iterations"
    delta_y0: list[float]
    residual_rms_mean: list[float]
    rank_deficient_steps: list[int]
    wall_clock_seconds: list[float]
    n: int
    h: float
    num_paths: int
    basis_count: int
    seed: int
    ridge: float
    tol: float
    m_max: int
    resample_per_iteration: bool
    condition_report: ConditionReport | None = None

    def to_json_dict(self) -> dict:
        d = {
            "y0_per_iteration": self.y0_per_iteration,
            "z0_final": [float(z) for z in self.z0_final],
            "m_stop": self.m_stop,
            "stop_reason": self.stop_reason,
            "delta_y0": self.delta_y0,
            "residual_rms_mean": self.residual_rms_mean,
            "rank_deficient_steps": self.rank_deficient_steps,
            "wall_clock_seconds": self.wall_clock_seconds,
            "n": self.n,
            "h": self.h,
            "num_paths": self.num_paths,
            "basis_count": self.basis_count,
            "seed": self.seed,
            "ridge": self.ridge,
            "tol": self.tol,
            "m_max": self.m_max,
            "resample_per_iteration": self.resample_per_iteration,
            "condition_report": (self.condition_report.to_json_dict()
                                 if self.condition_report else None),
        }
        return d


def _check_finite_targets(step: int, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            flat = ~np.isfinite(arr)
            path = int(np.argwhere(flat)[0][0])
            raise BackwardTargetError(step, path)


def backward_pass(problem: FbsdeProblem, grid: Grid, paths: PathEnsemble,
                  increments: IncrementSet, basis: BasisSet,
                  ridge: float = 0.0,
                  design_cache: dict[int, np.ndarray] | None = None,
                  ) -> ValueFunctionEstimate:
    """One backward regression sweep over a simulated ensemble.

    Rank-deficient designs are expected (a degenerate first forward pass
    puts all paths on one point) and only flagged on the fits.
    """
    if paths.num_paths != increments.num_paths or paths.n != increments.n:
        raise ValueError("paths and increments disagree on ensemble shape")
    n, h = grid.n, grid.h
    times = grid.times
    states = paths.states
    dw = increments.data

    y_next = np.asarray(problem.terminal(states[:, n, :]), dtype=float)
    _check_finite_targets(n, y_next)

    u_fits: dict[int, RegressionFit] = {}
    v_fits: dict[int, list[RegressionFit]] = {}

    for i in range(n - 1, 0, -1):
        if design_cache is not None and i in design_cache:
            des = design_cache[i]
        else:
            des = design_matrix(basis, states[:, i, :])
        fac = LeastSquaresFactorization(des, ridge)

        v_targets = (y_next / h)[:, None] * dw[:, i, :]
        _check_finite_targets(i, v_targets)
        v_coefs = fac.solve(v_targets)
        z_i = des @ v_coefs
        v_resid = z_i - v_targets
        v_fits[i] = [RegressionFit(
            coefficients=v_coefs[:, d],
            residual_rms=float(np.sqrt(np.mean(v_resid[:, d] ** 2))),
            rank_deficient=fac.rank_deficient) for d in range(dw.shape[2])]

        f_i = np.asarray(problem.driver(times[i], states[:, i, :], y_next, z_i),
                         dtype=float)
        u_target = f_i * h + y_next
        _check_finite_targets(i, u_target)
        u_coef = fac.solve(u_target)
        y_next = des @ u_coef  # fitted values: the next round's Y_{i+1}
        u_fits[i] = RegressionFit(
            coefficients=u_coef,
            residual_rms=float(np.sqrt(np.mean((y_next - u_target) ** 2))),
            rank_deficient=fac.rank_deficient)

    # i = 0: sample means over the ensemble, no regression
    y1 = y_next
    z0 = np.mean((y1 / h)[:, None] * dw[:, 0, :], axis=0)
    x0_tiled = np.broadcast_to(problem.x0, (paths.num_paths, problem.dim_x))
    f0 = np.asarray(problem.driver(0.0, x0_tiled, y1,
                                   np.broadcast_to(z0, (paths.num_paths,
                                                        problem.dim_w))),
                    dtype=float)
    _check_finite_targets(0, f0)
    y0 = float(np.mean(y1 + f0 * h))

    return ValueFunctionEstimate(problem=problem, grid=grid, basis=basis,
                                 u_fits=u_fits, v_fits=v_fits,
                                 y0=y0, z0=z0,
                                 iteration_index=paths.iteration_index)


def _make_basis_for(problem: FbsdeProblem, config: SolverConfig) -> BasisSet:
    if config.include_terminal:
        return make_basis(problem.dim_x, config.truncation,
                          include_terminal=True, g=problem.terminal)
    return make_basis(problem.dim_x, config.truncation)


def solve(problem: FbsdeProblem, grid: Grid, config: SolverConfig,
          bounds: CoefficientBounds | None = None,
          ) -> tuple[ValueFunctionEstimate, IterationReport]:
    """Run the full iteration until the Y_0 change drops below tolerance.

    The solver runs whether or not the convergence conditions hold; when
    `bounds` are supplied their condition report is attached so the caller
    can see whether theory covers the run.  Hitting `m_max` is reported as
    stop_reason "max_iterations", not raised; a forward blow-up propagates
    with its iteration index.
    """
    basis = _make_basis_for(problem, config)
    base_increments = generate_increments(
        grid.n, problem.dim_w, config.num_paths, grid.h, config.seed,
        max_entries=config.max_entries)

    estimate: ValueFunctionEstimate | None = None
    y0s: list[float] = []
    deltas: list[float] = []
    rms_means: list[float] = []
    deficient_counts: list[int] = []
    clocks: list[float] = []
    stop_reason = "max_iterations"
    n = grid.n

    for m in range(1, config.m_max + 1):
        t_start = time.perf_counter()
        if config.resample_per_iteration and m > 1:
            increments = generate_increments(
                grid.n, problem.dim_w, config.num_paths, grid.h,
                config.seed + m - 1, max_entries=config.max_entries)
        else:
            increments = base_increments

        cache: dict[int, np.ndarray] = {}
        prev = estimate

        def u_prev(i, x, prev=prev, cache=cache):
            if prev is None:
                return np.zeros(x.shape[0])
            if 1 <= i <= n - 1:
                des = design_matrix(basis, x)
                cache[i] = des
                return des @ prev.u_fits[i].coefficients
            return prev.u_values(i, x)

        paths = forward_paths(problem, grid, u_prev, increments,
                              iteration_index=m)
        new_estimate = backward_pass(problem, grid, paths, increments, basis,
                                     ridge=config.ridge, design_cache=cache)
        y0s.append(new_estimate.y0)
        all_fits = list(new_estimate.u_fits.values()) + [
            f for fits in new_estimate.v_fits.values() for f in fits]
        rms_means.append(float(np.mean([f.residual_rms for f in all_fits]))
                         if all_fits else 0.0)
        deficient_counts.append(sum(1 for i in new_estimate.u_fits
                                    if new_estimate.u_fits[i].rank_deficient))
        clocks.append(time.perf_counter() - t_start)

        stop = False
        if m >= 2:
            delta = abs(y0s[-1] - y0s[-2])
            deltas.append(delta)
            stop = delta < config.tol
            if stop and config.stop_on_function_change:
                stop = _function_change(estimate, new_estimate, paths) < config.tol
        estimate = new_estimate
        if stop:
            stop_reason = "tolerance"
            break

    report = IterationReport(
        y0_per_iteration=y0s,
        z0_final=estimate.z0,
        m_stop=len(y0s),
        stop_reason=stop_reason,
        delta_y0=deltas,
        residual_rms_mean=rms_means,
        rank_deficient_steps=deficient_counts,
        wall_clock_seconds=clocks,
        n=grid.n, h=grid.h,
        num_paths=config.num_paths,
        basis_count=basis.count,
        seed=config.seed,
        ridge=config.ridge,
        tol=config.tol,
        m_max=config.m_max,
        resample_per_iteration=config.resample_per_iteration,
        condition_report=(check_conditions(bounds, problem.horizon_T)
                          if bounds is not None else None),
    )
    return estimate, report


def _function_change(old: ValueFunctionEstimate, new: ValueFunctionEstimate,
                     paths: PathEnsemble, max_probe_paths: int = 256) -> float:
    """Sup of |u_new - u_old| over a probe set drawn from the ensemble."""
    n = paths.n
    stride = max(1, paths.num_paths // max_probe_paths)
    worst = 0.0
    for i in range(1, n):
        x = paths.states[::stride, i, :]
        worst = max(worst, float(np.max(np.abs(new.u_values(i, x)
                                               - old.u_values(i, x)))))
    return worst


def evaluate_solution(estimate: ValueFunctionEstimate, i: int,
                      x: np.ndarray) -> tuple[float, np.ndarray]:
    """(u, v) at step i and point x; i = 0 returns the scalar pair."""
    n = estimate.grid.n
    if not 0 <= i <= n:
        raise ValueError(f"step index {i} outside 0..{n}")
    if i == 0:
        return estimate.y0, estimate.z0.copy()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = float(estimate.u_values(i, x)[0])
    v = estimate.v_values(i, x)[0]
    return u, v


def simulate_solution_paths(problem: FbsdeProblem, grid: Grid,
                            estimate: ValueFunctionEstimate,
                            increments: IncrementSet,
                            ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Re-run the forward pass under the final estimate and tabulate
    (X, Y, Z) along every path.

    Returns states (num_paths, n+1, dim_x), values (num_paths, n+1) and
    controls (num_paths, n+1, dim_w); at i = n the terminal rule (g, 0)
    applies and at i = 0 the scalar pair is broadcast.
    """
    if grid.n != increments.n:
        raise ValueError("increments and grid disagree on n")
    n = grid.n
    paths = forward_paths(problem, grid, estimate.u_values, increments,
                          iteration_index=estimate.iteration_index)
    num = paths.num_paths
    y = np.empty((num, n + 1))
    z = np.empty((num, n + 1, problem.dim_w))
    y[:, 0] = estimate.y0
    z[:, 0, :] = estimate.z0
    for i in range(1, n):
        y[:, i] = estimate.u_values(i, paths.states[:, i, :])
        z[:, i, :] = estimate.v_values(i, paths.states[:, i, :])
    y[:, n] = np.asarray(problem.terminal(paths.states[:, n, :]), dtype=float)
    z[:, n, :] = 0.0
    return paths.states, y, z
