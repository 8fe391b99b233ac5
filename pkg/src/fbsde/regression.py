"""Clamped-quadratic regression basis and least-squares projections.

Conditional expectations are replaced by projections onto a small basis
evaluated at the simulated states: the constant, the coordinates, and all
pairwise coordinate products clamped to [-R, R] (optionally the terminal
function as an extra member).  Clamping keeps the basis functions
Lipschitz, which the solver needs so that fitted value functions cannot
blow up the next forward pass.

The least-squares solves use a column-pivoted QR factorization with rank
detection at threshold eps * max(rows, cols) * |R[0,0]|; on deficiency the
minimum-norm solution is taken via an SVD of the small triangular factor.
Rank-deficient designs are a guaranteed input here (the first iteration of
a y-degenerate diffusion puts every path at the same point), so deficiency
is flagged, never raised.  One factorization can serve many right-hand
sides sharing a design matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

__all__ = [
    "BasisSet",
    "RegressionFit",
    "LeastSquaresFactorization",
    "make_basis",
    "design_matrix",
    "fit_least_squares",
    "fit_least_squares_multi",
    "evaluate_fit",
    "fit_to_json_dict",
    "fit_from_json_dict",
]


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Ordered Lipschitz basis functions of a D-dimensional state.

    `functions[k]` maps (N, D) points to (N,) values.  `lipschitz[k]` is a
    Lipschitz constant for function k: 0 for the constant, 1 for the
    coordinates, 2*sqrt(R) for the clamped products.  For off-diagonal
    products the 2*sqrt(R) constant is exact only where no coordinate
    exceeds 2*sqrt(R) in magnitude (far outside that ball the literal
    product clamp can be steeper); the diagonal squares satisfy it
    globally.  When a terminal function is appended its constant must be
    supplied by the caller (None disables the aggregate bound).
    """

    dimension: int
    truncation: float
    include_terminal: bool
    functions: tuple[Callable[[np.ndarray], np.ndarray], ...]
    lipschitz: tuple[float | None, ...]
    # index pairs of the clamped-product block, set by `make_basis`; lets
    # `design_matrix` fill whole blocks instead of looping over functions
    prod_rows: np.ndarray | None = None
    prod_cols: np.ndarray | None = None
    terminal_function: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def count(self) -> int:
        return len(self.functions)

    def max_lipschitz(self) -> float | None:
        if any(c is None for c in self.lipschitz):
            return None
        return max(self.lipschitz)


@dataclass(frozen=True, eq=False)
class RegressionFit:
    """Coefficients of one least-squares projection."""

    coefficients: np.ndarray
    residual_rms: float
    rank_deficient: bool


def make_basis(D: int, R: float, include_terminal: bool = False,
               g: Callable[[np.ndarray], np.ndarray] | None = None,
               terminal_lipschitz: float | None = None) -> BasisSet:
    """Build the clamped-quadratic basis: 1, x_d, clamp(x_d x_q, -R, R).

    Ordered as the constant, the D coordinates, then the D(D+1)/2 products
    with d <= q in row-major upper-triangular order, optionally followed by
    the terminal function g (which must itself be Lipschitz).
    """
    if D < 1:
        raise ValueError("D must be >= 1")
    if not (R > 0):
        raise ValueError("R must be positive")
    if include_terminal != (g is not None):
        raise ValueError("g must be given exactly when include_terminal is set")

    functions: list[Callable] = [lambda x: np.ones(x.shape[0])]
    constants: list[float | None] = [0.0]

    def coord(d):
        return lambda x: x[:, d]

    def product(d, q):
        return lambda x: np.clip(x[:, d] * x[:, q], -R, R)

    pr, pc = [], []
    for d in range(D):
        functions.append(coord(d))
        constants.append(1.0)
    for d in range(D):
        for q in range(d, D):
            functions.append(product(d, q))
            constants.append(2.0 * np.sqrt(R))
            pr.append(d)
            pc.append(q)
    terminal_fun = None
    if include_terminal:
        terminal_fun = lambda x: np.asarray(g(x), dtype=float)  # noqa: E731
        functions.append(terminal_fun)
        constants.append(terminal_lipschitz)

    return BasisSet(dimension=D, truncation=float(R),
                    include_terminal=include_terminal,
                    functions=tuple(functions), lipschitz=tuple(constants),
                    prod_rows=np.array(pr), prod_cols=np.array(pc),
                    terminal_function=terminal_fun)


def design_matrix(basis: BasisSet, points: np.ndarray) -> np.ndarray:
    """Evaluate every basis function at every row of `points` (N, D)."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != basis.dimension:
        raise ValueError(f"points must be (N, {basis.dimension}), got {points.shape}")
    out = np.empty((points.shape[0], basis.count))
    if basis.prod_rows is not None:
        # block fill of the standard layout: 1 | coords | clamped products | g
        D = basis.dimension
        out[:, 0] = 1.0
        out[:, 1:D + 1] = points
        np.clip(points[:, basis.prod_rows] * points[:, basis.prod_cols],
                -basis.truncation, basis.truncation,
                out=out[:, D + 1:D + 1 + len(basis.prod_rows)])
        if basis.terminal_function is not None:
            out[:, -1] = basis.terminal_function(points)
    else:
        for k, fun in enumerate(basis.functions):
            out[:, k] = fun(points)
    bad = ~np.isfinite(out)
    if bad.any():
        row, k = np.argwhere(bad)[0]
        raise ValueError(f"non-finite basis output at point {row}, function {k}")
    return out


class LeastSquaresFactorization:
    """Factorization of one design matrix, reusable across targets.

    Three execution tiers behind one contract (least-squares minimizer,
    minimum-norm on deficiency, `rank_deficient` flag):

    * all rows identical (a collapsed ensemble): exact rank-1 minimum-norm
      solution row * mean(target) / |row|^2, no LAPACK call;
    * comfortably full rank (Gram-matrix condition below 1e12): Cholesky of
      the normal equations followed by one iterative-refinement step, which
      restores machine-level residual orthogonality at BLAS-3 speed;
    * otherwise: column-pivoted QR with rank detection at threshold
      eps * max(rows, cols) * |R[0,0]| and, on deficiency, the minimum-norm
      solution through an SVD of the triangular factor.

    With ridge > 0 the factored system is the design augmented by
    sqrt(rows * ridge) * I, which minimizes mean squared residual plus
    ridge * |coefficients|^2 and is always full rank.
    """

    _GRAM_COND_LIMIT = 1e12  # squared condition number admitted to Cholesky

    def __init__(self, design: np.ndarray, ridge: float = 0.0):
        design = np.asarray(design, dtype=float)
        if design.ndim != 2:
            raise ValueError("design must be 2-D")
        if ridge < 0:
            raise ValueError("ridge must be >= 0")
        self.design = design
        self.ridge = float(ridge)
        rows, cols = design.shape
        self._mode = "qr"
        self._const_row = None
        self._chol = None

        if ridge == 0.0 and rows > 1 and np.ptp(design, axis=0).max() == 0.0:
            row = design[0].copy()
            self._const_row = row
            self._row_sq = float(row @ row)
            self.rank = 1 if self._row_sq > 0.0 else 0
            self.rank_deficient = self.rank < cols
            self._mode = "const"
            return

        gram = design.T @ design
        if ridge > 0.0:
            gram = gram + rows * ridge * np.eye(cols)
        diag = np.diag(gram)
        if np.all(diag > 0.0):
            # equilibrate to unit diagonal; the smallest Cholesky pivot of
            # the scaled Gram matrix then estimates 1/cond(gram)
            scale = 1.0 / np.sqrt(diag)
            try:
                chol = scipy.linalg.cho_factor(gram * np.outer(scale, scale))
                pivots = np.abs(np.diag(chol[0]))
                if pivots.min() ** 2 > 1.0 / self._GRAM_COND_LIMIT:
                    self._chol = chol
                    self._scale = scale
                    self.rank = cols
                    self.rank_deficient = False
                    self._mode = "chol"
                    return
            except scipy.linalg.LinAlgError:
                pass

        mat = design
        if ridge > 0.0:
            mat = np.vstack([design, np.sqrt(rows * ridge) * np.eye(cols)])
        self._q, self._r, self._piv = scipy.linalg.qr(
            mat, mode="economic", pivoting=True)
        diag = np.abs(np.diag(self._r))
        top = diag[0] if diag.size else 0.0
        tol = np.finfo(float).eps * max(mat.shape) * top
        self.rank = int(np.sum(diag > tol)) if top > 0.0 else 0
        self.rank_deficient = self.rank < cols and ridge == 0.0
        self._svd = None
        if self.rank < cols:
            self._svd = scipy.linalg.svd(self._r)

    def _solve_chol(self, b: np.ndarray) -> np.ndarray:
        A = self.design
        lam = A.shape[0] * self.ridge
        s = self._scale[:, None]

        def normal_solve(rhs):
            return s * scipy.linalg.cho_solve(self._chol, s * rhs)

        coef = normal_solve(A.T @ b)
        # one refinement step on the normal equations
        resid_ne = A.T @ (b - A @ coef) - (lam * coef if lam else 0.0)
        return coef + normal_solve(resid_ne)

    def solve(self, targets: np.ndarray) -> np.ndarray:
        """Minimum-norm least-squares coefficients for (rows,) or (rows, J)."""
        targets = np.asarray(targets, dtype=float)
        single = targets.ndim == 1
        b = targets[:, None] if single else targets
        if b.shape[0] != self.design.shape[0]:
            raise ValueError("targets do not match the design row count")
        if not np.all(np.isfinite(b)):
            raise ValueError("non-finite targets")
        cols = self.design.shape[1]
        if self._mode == "const":
            if self.rank == 0:
                coef = np.zeros((cols, b.shape[1]))
            else:
                coef = np.outer(self._const_row, b.mean(axis=0) / self._row_sq)
            return coef[:, 0] if single else coef
        if self._mode == "chol":
            coef = self._solve_chol(b)
            return coef[:, 0] if single else coef
        if self.ridge > 0.0:
            b = np.vstack([b, np.zeros((cols, b.shape[1]))])
        qtb = self._q.T @ b
        coef = np.zeros((cols, b.shape[1]))
        if self._svd is None:
            sol = scipy.linalg.solve_triangular(self._r, qtb)
            coef[self._piv] = sol
        else:
            u, s, vt = self._svd
            keep = s > (np.finfo(float).eps * max(self._r.shape) * s[0]) \
                if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
            tmp = vt[keep].T @ (u[:, keep].T @ qtb / s[keep, None])
            coef[self._piv] = tmp
        return coef[:, 0] if single else coef

    def fit(self, targets: np.ndarray) -> RegressionFit:
        coef = self.solve(targets)
        resid = self.design @ coef - targets
        return RegressionFit(coefficients=coef,
                             residual_rms=float(np.sqrt(np.mean(resid ** 2))),
                             rank_deficient=self.rank_deficient)


def fit_least_squares(design: np.ndarray, targets: np.ndarray,
                      ridge: float = 0.0) -> RegressionFit:
    """Minimize mean squared residual (+ ridge * |coef|^2 when ridge > 0).

    On a rank-deficient design with ridge = 0 the minimum-norm minimizer is
    returned and `rank_deficient` is set.
    """
    targets = np.asarray(targets, dtype=float)
    if targets.ndim != 1:
        raise ValueError("targets must be 1-D; use fit_least_squares_multi")
    return LeastSquaresFactorization(design, ridge).fit(targets)


def fit_least_squares_multi(design: np.ndarray, targets: np.ndarray,
                            ridge: float = 0.0) -> list[RegressionFit]:
    """Fit each column of `targets` (rows, J) reusing one factorization."""
    targets = np.asarray(targets, dtype=float)
    if targets.ndim != 2:
        raise ValueError("targets must be 2-D")
    fac = LeastSquaresFactorization(design, ridge)
    coefs = fac.solve(targets)
    resid = design @ coefs - targets
    rms = np.sqrt(np.mean(resid ** 2, axis=0))
    return [RegressionFit(coefficients=coefs[:, j], residual_rms=float(rms[j]),
                          rank_deficient=fac.rank_deficient)
            for j in range(targets.shape[1])]


def evaluate_fit(basis: BasisSet, fit: RegressionFit, x: np.ndarray):
    """Fitted value at one D-vector (scalar out) or at (N, D) points."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    vals = design_matrix(basis, pts) @ fit.coefficients
    return float(vals[0]) if single else vals


def fit_to_json_dict(fit: RegressionFit, step_index: int) -> dict:
    return {
        "step_index": step_index,
        "coefficients": [float(c) for c in fit.coefficients],
        "residual_rms": fit.residual_rms,
        "rank_deficient": fit.rank_deficient,
    }


def fit_from_json_dict(d: dict) -> tuple[int, RegressionFit]:
    fit = RegressionFit(coefficients=np.asarray(d["coefficients"], dtype=float),
                        residual_rms=float(d["residual_rms"]),
                        rank_deficient=bool(d["rank_deficient"]))
    return int(d["step_index"]), fit
