"""Coupled FBSDE solver by time discretization and value-function iteration.

Submodules: `model` (problem data and catalog), `conditions` (closed-form
convergence constants), `paths` (reproducible increments and the forward
pass), `regression` (basis and least squares), `solver` (the iteration),
`oracle` (quadrature ground truth and the sine benchmark), `cli`
(experiment front end).
"""

from .conditions import (ConditionReport, LambdaSchedule, check_conditions,
                         gamma0, gamma1)
from .model import (CoefficientBounds, FbsdeProblem, Grid,
                    make_catalog_problem, sine_bounds, sine_example,
                    validate_problem)
from .oracle import (oracle_compare, quadrature_fixed_point,
                     run_sine_benchmark, sine_reference_paths)
from .paths import (IncrementSet, PathEnsemble, forward_paths,
                    generate_increments)
from .regression import (BasisSet, RegressionFit, design_matrix,
                         evaluate_fit, fit_least_squares, make_basis)
from .solver import (IterationReport, SolverConfig, ValueFunctionEstimate,
                     backward_pass, evaluate_solution,
                     simulate_solution_paths, solve)

__version__ = "0.1.0"

__all__ = [
    "BasisSet", "CoefficientBounds", "ConditionReport", "FbsdeProblem",
    "Grid", "IncrementSet", "IterationReport", "LambdaSchedule",
    "PathEnsemble", "RegressionFit", "SolverConfig", "ValueFunctionEstimate",
    "backward_pass", "check_conditions", "design_matrix", "evaluate_fit",
    "evaluate_solution", "fit_least_squares", "forward_paths", "gamma0",
    "gamma1", "generate_increments", "make_basis", "make_catalog_problem",
    "oracle_compare", "quadrature_fixed_point", "run_sine_benchmark",
    "simulate_solution_paths", "sine_bounds", "sine_example",
    "sine_reference_paths", "solve", "validate_problem",
]
