"""Independent ground truths for validating the Monte Carlo solver.

Two routes are provided.  For one-dimensional problems,
`quadrature_fixed_point` iterates the exact one-step map -- conditional
expectations computed by Gauss-Hermite quadrature on a spatial grid with
linear interpolation -- to its fixed point, which is the value function of
the fully implicit discretized system.  For the sine benchmark in any
dimension, the closed decoupling relation Y_t = e^{-r(T-t)} sum_d sin(X_d)
turns the coupled system into a plain forward SDE: `sine_reference_paths`
runs its Euler scheme on the same Brownian increments the solver used, so
per-path errors are directly comparable.

Grid values are interpolated linearly between nodes and extended as
constants beyond the boundary, which keeps the interpolant Lipschitz;
boundary-polluted nodes (within a few diffusion standard deviations of the
edge) should be excluded from comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import FbsdeProblem, Grid, sine_bounds, sine_example, sine_exact_y0
from .paths import IncrementSet, generate_increments
from .solver import (IterationReport, SolverConfig, ValueFunctionEstimate,
                     simulate_solution_paths, solve)

__all__ = [
    "GridFunction",
    "BenchmarkResult",
    "OracleCompareResult",
    "ConvergenceStudy",
    "OracleDivergenceError",
    "quadrature_fixed_point",
    "sine_reference_paths",
    "run_sine_benchmark",
    "convergence_study_n",
    "oracle_compare",
]


class OracleDivergenceError(RuntimeError):
    """The exact-expectation iteration did not reach its fixed point."""

    def __init__(self, change: float, inner_max: int):
        self.change = change
        self.inner_max = inner_max
        super().__init__(
            f"fixed-point iteration still moving by {change:.3g} (sup-norm) "
            f"after {inner_max} sweeps")


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Value/control functions tabulated on a uniform spatial grid.

    Rows index time steps 0..n; evaluation between nodes is linear, outside
    the grid constant at the boundary value.  The terminal row holds the
    terminal function exactly (and zero control).
    """

    x_nodes: np.ndarray
    u_values: np.ndarray
    v_values: np.ndarray
    horizon_T: float

    @property
    def n(self) -> int:
        return self.u_values.shape[0] - 1

    def u_at(self, i: int, x) -> float | np.ndarray:
        vals = np.interp(np.asarray(x, dtype=float), self.x_nodes, self.u_values[i])
        return float(vals) if np.isscalar(x) or np.ndim(x) == 0 else vals

    def v_at(self, i: int, x) -> float | np.ndarray:
        vals = np.interp(np.asarray(x, dtype=float), self.x_nodes, self.v_values[i])
        return float(vals) if np.isscalar(x) or np.ndim(x) == 0 else vals

    def write_csv(self, path) -> None:
        """Dump as CSV rows (i, t_i, x, u, v)."""
        h = self.horizon_T / self.n
        with open(path, "w") as fh:
            fh.write("i,t_i,x,u,v\n")
            for i in range(self.n + 1):
                t = i * h
                for j, x in enumerate(self.x_nodes):
                    fh.write(f"{i},{t:.17g},{x:.17g},"
                             f"{self.u_values[i, j]:.17g},"
                             f"{self.v_values[i, j]:.17g}\n")


def _one_sweep(problem: FbsdeProblem, grid: Grid, nodes: np.ndarray,
               phi: np.ndarray, gh_x: np.ndarray, gh_w: np.ndarray,
               ) -> tuple[np.ndarray, np.ndarray]:
    """Apply the exact one-step map once: phi (n, M) -> (u, v) on the grid."""
    n, h = grid.n, grid.h
    times = grid.times
    m = nodes.shape[0]
    q = gh_x.shape[0]
    nodes_col = nodes[:, None]
    u = np.empty((n + 1, m))
    v = np.zeros((n + 1, m))
    u[n] = np.asarray(problem.terminal(nodes_col), dtype=float)

    xi = math.sqrt(2.0) * gh_x          # standard normal abscissae
    w = gh_w / math.sqrt(math.pi)       # normalized weights
    sqrt_h = math.sqrt(h)
    x_rep = np.repeat(nodes, q)[:, None]

    for i in range(n - 1, -1, -1):
        y_i = phi[i]
        b_i = np.asarray(problem.drift(times[i], nodes_col, y_i), dtype=float)[:, 0]
        s_i = np.asarray(problem.diffusion(times[i], nodes_col, y_i),
                         dtype=float)[:, 0, 0]
        x_next = (nodes + b_i * h)[:, None] + (s_i * sqrt_h)[:, None] * xi[None, :]
        y_next = np.interp(x_next.ravel(), nodes, u[i + 1]).reshape(m, q)
        # control: (1/h) E{Y_{i+1} dW} with dW = sqrt(h) xi
        v[i] = (y_next * xi[None, :]) @ w / sqrt_h
        f_vals = np.asarray(
            problem.driver(times[i], x_rep, y_next.ravel(),
                           np.repeat(v[i], q)[:, None]),
            dtype=float).reshape(m, q)
        u[i] = (y_next + h * f_vals) @ w
    return u, v


def quadrature_fixed_point(problem: FbsdeProblem, grid: Grid,
                           x_lo: float, x_hi: float,
                           node_count: int = 801, quad_order: int = 32,
                           inner_tol: float = 1e-10,
                           inner_max: int = 200) -> GridFunction:
    """Fixed point of the exact one-step map for a one-dimensional problem.

    Starting from the zero function, the map is applied until the sup-norm
    change over all steps and nodes falls below `inner_tol`; the fixed
    point solves the fully implicit discretized system with exact Gaussian
    conditional expectations (up to quadrature and interpolation error).
    Raises `OracleDivergenceError` when `inner_max` sweeps do not suffice,
    as expected for problems violating every convergence condition.
    """
    if problem.dim_x != 1 or problem.dim_w != 1:
        raise ValueError("the quadrature oracle is one-dimensional only")
    if not x_lo < x_hi:
        raise ValueError("x_lo must be below x_hi")
    if quad_order < 8:
        raise ValueError("quad_order must be >= 8")
    if node_count < 2:
        raise ValueError("node_count must be >= 2")
    gh_x, gh_w = np.polynomial.hermite.hermgauss(quad_order)
    nodes = np.linspace(x_lo, x_hi, node_count)
    phi = np.zeros((grid.n, node_count))
    change = math.inf
    for _ in range(inner_max):
        u, v = _one_sweep(problem, grid, nodes, phi, gh_x, gh_w)
        change = float(np.max(np.abs(u[:grid.n] - phi)))
        phi = u[:grid.n]
        if change < inner_tol:
            return GridFunction(x_nodes=nodes, u_values=u, v_values=v,
                                horizon_T=grid.horizon_T)
    raise OracleDivergenceError(change, inner_max)


def sine_reference_paths(D: int, sigma: float, r: float, grid: Grid,
                         increments: IncrementSet,
                         x0_component: float = math.pi / 2,
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Euler paths of the decoupled sine benchmark on given increments.

    The known decoupling substitutes y = e^{-r(T-t)} sum_d sin(x_d) into
    the diffusion, leaving a plain forward SDE; the returned values are the
    reference states (num_paths, n+1, D) and reference backward values
    (num_paths, n+1) evaluated through the same relation.
    """
    if increments.dim_w != D:
        raise ValueError("increments dim_w must equal D")
    if increments.n != grid.n:
        raise ValueError("increments and grid disagree on n")
    n = grid.n
    T = grid.horizon_T
    times = grid.times
    num = increments.num_paths
    x = np.empty((num, n + 1, D))
    y = np.empty((num, n + 1))
    x[:, 0, :] = x0_component
    for i in range(n):
        decay = math.exp(-r * (T - times[i]))
        yi = decay * np.sin(x[:, i, :]).sum(axis=1)
        y[:, i] = yi
        s = sigma * yi
        x[:, i + 1, :] = x[:, i, :] + s[:, None] * increments.data[:, i, :]
    y[:, n] = np.sin(x[:, n, :]).sum(axis=1)
    return x, y


@dataclass(eq=False)
class BenchmarkResult:
    """Solver-vs-closed-form comparison for one sine benchmark run."""

    y0_estimate: float
    y0_exact: float
    abs_error: float
    mse_curve: np.ndarray          # per step i: mean over paths of (Y - Yref)^2
    m_stop: int
    config: dict
    report: IterationReport
    estimate: ValueFunctionEstimate

    def to_json_dict(self) -> dict:
        return {
            "y0_estimate": self.y0_estimate,
            "y0_exact": self.y0_exact,
            "abs_error": self.abs_error,
            "mse_curve": [float(v) for v in self.mse_curve],
            "m_stop": self.m_stop,
            "config": self.config,
        }


def run_sine_benchmark(D: int, sigma: float, r: float, grid: Grid,
                       config: SolverConfig,
                       x0_component: float = math.pi / 2) -> BenchmarkResult:
    """Solve the sine benchmark and compare against its closed form.

    The per-step mean-square error pits the solver's path values against
    the decoupled Euler reference driven by the identical increments (the
    base increment set of `config.seed`).
    """
    problem = sine_example(D, sigma, r, x0_component, grid.horizon_T)
    bounds = sine_bounds(D, sigma, r, grid.horizon_T)
    estimate, report = solve(problem, grid, config, bounds=bounds)
    increments = generate_increments(grid.n, D, config.num_paths, grid.h,
                                     config.seed, max_entries=config.max_entries)
    _, y_solver, _ = simulate_solution_paths(problem, grid, estimate, increments)
    _, y_ref = sine_reference_paths(D, sigma, r, grid, increments, x0_component)
    mse = np.mean((y_solver - y_ref) ** 2, axis=0)
    exact = sine_exact_y0(D, r, grid.horizon_T)
    return BenchmarkResult(
        y0_estimate=estimate.y0, y0_exact=exact,
        abs_error=abs(estimate.y0 - exact),
        mse_curve=mse, m_stop=report.m_stop,
        config={"D": D, "sigma": sigma, "r": r, "n": grid.n,
                "T": grid.horizon_T, "num_paths": config.num_paths,
                "seed": config.seed, "tol": config.tol},
        report=report, estimate=estimate)


@dataclass(eq=False)
class ConvergenceStudy:
    """abs_error versus step count, with the fitted log-log slope."""

    rows: list[dict]               # n, abs_error, m_stop, slope_so_far
    slope: float | None

    def to_json_dict(self) -> dict:
        return {"rows": self.rows, "slope": self.slope}


def _loglog_slope(ns, errors) -> float | None:
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > 0
    if keep.sum() < 2:
        return None
    return float(np.polyfit(np.log(ns[keep]), np.log(errors[keep]), 1)[0])


def convergence_study_n(D: int, sigma: float, r: float, n_list,
                        config: SolverConfig, num_seeds: int = 1,
                        T: float = 1.0) -> ConvergenceStudy:
    """Run the sine benchmark over a list of step counts.

    Per n the absolute error |Y_0 - D e^{-rT}| is averaged over `num_seeds`
    consecutive seeds starting at config.seed; the final slope is the
    least-squares fit of log(error) against log(n).
    """
    if len(n_list) == 0:
        raise ValueError("n_list must be nonempty")
    rows = []
    ns, errs = [], []
    for n in n_list:
        errors, stops = [], []
        for k in range(num_seeds):
            cfg = replace(config, seed=config.seed + k)
            res = run_sine_benchmark(D, sigma, r, Grid(n=int(n), horizon_T=T),
                                     cfg)
            errors.append(res.abs_error)
            stops.append(res.m_stop)
        ns.append(int(n))
        errs.append(float(np.mean(errors)))
        rows.append({
            "n": int(n),
            "abs_error": errs[-1],
            "m_stop": float(np.mean(stops)),
            "slope_so_far": _loglog_slope(ns, errs),
        })
    return ConvergenceStudy(rows=rows, slope=_loglog_slope(ns, errs))


@dataclass(eq=False)
class OracleCompareResult:
    """Cross-seed solver estimates against the quadrature oracle value."""

    oracle_u0: float
    y0_per_seed: list[float]
    y0_mean: float
    y0_std: float
    abs_difference: float
    tolerance: float               # 3 * cross-seed std + oracle budget
    within_tolerance: bool

    def to_json_dict(self) -> dict:
        return {
            "oracle_u0": self.oracle_u0,
            "y0_per_seed": self.y0_per_seed,
            "y0_mean": self.y0_mean,
            "y0_std": self.y0_std,
            "abs_difference": self.abs_difference,
            "tolerance": self.tolerance,
            "within_tolerance": self.within_tolerance,
        }


def oracle_compare(problem: FbsdeProblem, grid: Grid, config: SolverConfig,
                   x_lo: float | None = None, x_hi: float | None = None,
                   node_count: int = 801, quad_order: int = 32,
                   inner_tol: float = 1e-10, inner_max: int = 200,
                   num_seeds: int = 10,
                   oracle_budget: float = 1e-4) -> OracleCompareResult:
    """Solve a 1-D problem across seeds and compare Y_0 to the oracle.

    The acceptance yardstick is |mean Y_0 - oracle u_0(x_0)| against three
    cross-seed standard deviations plus the oracle's own error budget.
    """
    if problem.dim_x != 1:
        raise ValueError("oracle comparison requires a one-dimensional problem")
    x0 = float(problem.x0[0])
    if x_lo is None:
        x_lo = x0 - 2.0
    if x_hi is None:
        x_hi = x0 + 2.0
    gf = quadrature_fixed_point(problem, grid, x_lo, x_hi, node_count,
                                quad_order, inner_tol, inner_max)
    u0 = gf.u_at(0, x0)
    y0s = []
    for k in range(num_seeds):
        cfg = replace(config, seed=config.seed + k)
        estimate, _ = solve(problem, grid, cfg)
        y0s.append(estimate.y0)
    mean = float(np.mean(y0s))
    std = float(np.std(y0s, ddof=1)) if len(y0s) > 1 else 0.0
    diff = abs(mean - u0)
    tol = 3.0 * std + oracle_budget
    return OracleCompareResult(
        oracle_u0=u0, y0_per_seed=y0s, y0_mean=mean, y0_std=std,
        abs_difference=diff, tolerance=tol, within_tolerance=diff <= tol)
