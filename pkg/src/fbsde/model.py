"""Problem data for coupled forward-backward SDEs.

A problem couples a forward diffusion

    dX_t = b(t, X_t, Y_t) dt + sigma(t, X_t, Y_t) dW_t,    X_0 = x0,

with a backward equation

    Y_t = g(X_T) + int_t^T f(s, X_s, Y_s, Z_s) ds - int_t^T Z_s dW_s,

where the scalar backward part Y couples into the forward coefficients but
the control part Z does not.  Coefficient callables are vectorized over a
leading batch axis:

    b(t, x, y)        t scalar, x (N, dim_x), y (N,)      -> (N, dim_x)
    sigma(t, x, y)    same inputs                          -> (N, dim_x, dim_w)
    f(t, x, y, z)     z (N, dim_w)                         -> (N,)
    g(x)              x (N, dim_x)                         -> (N,)

`CoefficientBounds` holds the squared Lipschitz/growth constants and the
one-sided monotonicity constants that the convergence conditions are
evaluated from; `validate_problem` falsifies a declared set of bounds by
random probing (a pass is evidence, not proof).

All norms are Euclidean; the diffusion matrix is measured in Frobenius
norm.  This convention is a choice (the multi-dimensional constants admit
others) and the condition checker is only meaningful relative to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "FbsdeProblem",
    "CoefficientBounds",
    "Grid",
    "ValidationReport",
    "Violation",
    "validate_problem",
    "sine_example",
    "sine_bounds",
    "catalog_names",
    "make_catalog_problem",
]


@dataclass(frozen=True, eq=False)
class FbsdeProblem:
    """Coefficient functions and dimensions of one coupled FBSDE.

    Immutable after construction; the callables must be re-entrant so a
    problem can be shared across concurrent workers.
    """

    dim_x: int
    dim_w: int
    horizon_T: float
    x0: np.ndarray
    drift: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    driver: Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    terminal: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"

    def __post_init__(self):
        if self.dim_x < 1 or self.dim_w < 1:
            raise ValueError("dim_x and dim_w must be >= 1")
        if not (self.horizon_T > 0):
            raise ValueError("horizon_T must be positive")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.dim_x,):
            raise ValueError(f"x0 must have shape ({self.dim_x},), got {x0.shape}")
        object.__setattr__(self, "x0", x0)


@dataclass(frozen=True)
class CoefficientBounds:
    """Squared Lipschitz/growth constants and monotonicity constants.

    `k_b` and `k_f` are one-sided (may be negative): they bound
    [b(t,x1,y)-b(t,x2,y)].(x1-x2) <= k_b |x1-x2|^2 and the analogous
    inequality for f in y.  The remaining constants are squared Lipschitz
    constants (`b_y` .. `g_x`) and squared growth constants (`b_0` .. `g_0`).
    `K_lip` upper-bounds all of them and also serves as the generic squared
    Lipschitz constant of b in x and f in y.
    """

    K_lip: float
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

    def __post_init__(self):
        if self.K_lip < 0:
            raise ValueError("K_lip must be >= 0")
        nonneg = {
            "b_y": self.b_y, "sigma_x": self.sigma_x, "sigma_y": self.sigma_y,
            "f_x": self.f_x, "f_z": self.f_z, "g_x": self.g_x,
            "b_0": self.b_0, "sigma_0": self.sigma_0, "f_0": self.f_0,
            "g_0": self.g_0,
        }
        for key, val in nonneg.items():
            if val < 0:
                raise ValueError(f"{key} must be >= 0, got {val}")
            if val > self.K_lip * (1 + 1e-12):
                raise ValueError(f"{key} = {val} exceeds K_lip = {self.K_lip}")
        for key, val in (("k_b", self.k_b), ("k_f", self.k_f)):
            if abs(val) > self.K_lip * (1 + 1e-12):
                raise ValueError(f"|{key}| = {abs(val)} exceeds K_lip = {self.K_lip}")


@dataclass(frozen=True)
class Grid:
    """Uniform time grid t_i = i*h, i = 0..n, with h = T/n."""

    n: int
    horizon_T: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not (self.horizon_T > 0):
            raise ValueError("horizon_T must be positive")

    @property
    def h(self) -> float:
        return self.horizon_T / self.n

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.h


@dataclass
class Violation:
    """One falsified inequality at a probe point."""

    inequality: str
    lhs: float
    rhs: float
    detail: str


@dataclass
class ValidationReport:
    passed: bool
    n_probes: int
    violations: list[Violation] = field(default_factory=list)

    def summary(self) -> str:
        if self.passed:
            return f"pass ({self.n_probes} probes, no violation found)"
        lines = [f"FAIL ({len(self.violations)} violations in {self.n_probes} probes)"]
        for v in self.violations[:10]:
            lines.append(f"  {v.inequality}: lhs={v.lhs:.6g} > rhs={v.rhs:.6g}  [{v.detail}]")
        return "\n".join(lines)


def _sq(a: np.ndarray) -> float:
    return float(np.sum(np.asarray(a, dtype=float) ** 2))


def validate_problem(
    problem: FbsdeProblem,
    bounds: CoefficientBounds,
    n_probes: int = 1000,
    seed: int = 0,
    scales: Sequence[float] = (0.3, 1.0, 3.0, 10.0),
) -> ValidationReport:
    """Probe the declared Lipschitz/growth/monotonicity bounds at random points.

    Draws `n_probes` point pairs (t, x1, x2, y1, y2, z1, z2) at several
    magnitude scales and checks every inequality the bounds assert.  Any
    non-finite coefficient output is reported as a hard violation.  Passing
    is falsification-free evidence only; probing cannot prove the bounds.
    """
    rng = np.random.default_rng(seed)
    K = bounds.K_lip
    tol = 1e-9  # absolute slack for exact-equality cases
    violations: list[Violation] = []
    dx, dw = problem.dim_x, problem.dim_w

    for p in range(n_probes):
        scale = scales[p % len(scales)]
        t = rng.uniform(0.0, problem.horizon_T)
        x = rng.normal(scale=scale, size=(2, dx))
        y = rng.normal(scale=scale, size=2)
        z = rng.normal(scale=scale, size=(2, dw))
        where = f"probe {p}, scale {scale}"

        try:
            b_xx = problem.drift(t, x, np.full(2, y[0]))
            b_pair = problem.drift(t, x, y)
            s_pair = problem.diffusion(t, x, y)
            f_yy = problem.driver(t, np.tile(x[:1], (2, 1)), y, np.tile(z[:1], (2, 1)))
            f_pair = problem.driver(t, x, y, z)
            g_pair = problem.terminal(x)
        except Exception as exc:  # noqa: BLE001 - opaque user callables
            violations.append(Violation("evaluation", math.nan, math.nan,
                                        f"{where}: coefficient raised {exc!r}"))
            continue

        outputs = np.concatenate([np.ravel(b_xx), np.ravel(b_pair), np.ravel(s_pair),
                                  np.ravel(f_yy), np.ravel(f_pair), np.ravel(g_pair)])
        if not np.all(np.isfinite(outputs)):
            violations.append(Violation("finiteness", math.inf, math.nan,
                                        f"{where}: non-finite coefficient output"))
            continue

        d_x = x[0] - x[1]
        d_y = y[0] - y[1]
        d_z = z[0] - z[1]
        sq_dx, sq_dy, sq_dz = _sq(d_x), _sq(d_y), _sq(d_z)

        checks = [
            # one-sided monotonicity
            ("b monotone in x", float(np.dot(b_xx[0] - b_xx[1], d_x)),
             bounds.k_b * sq_dx),
            ("f monotone in y", float((f_yy[0] - f_yy[1]) * d_y),
             bounds.k_f * sq_dy),
            # squared Lipschitz
            ("b Lipschitz", _sq(b_pair[0] - b_pair[1]), K * sq_dx + bounds.b_y * sq_dy),
            ("sigma Lipschitz", _sq(s_pair[0] - s_pair[1]),
             bounds.sigma_x * sq_dx + bounds.sigma_y * sq_dy),
            ("f Lipschitz", (f_pair[0] - f_pair[1]) ** 2,
             bounds.f_x * sq_dx + K * sq_dy + bounds.f_z * sq_dz),
            ("g Lipschitz", (g_pair[0] - g_pair[1]) ** 2, bounds.g_x * sq_dx),
            # squared growth
            ("b growth", _sq(b_pair[0]), bounds.b_0 + K * _sq(x[0]) + bounds.b_y * y[0] ** 2),
            ("sigma growth", _sq(s_pair[0]),
             bounds.sigma_0 + bounds.sigma_x * _sq(x[0]) + bounds.sigma_y * y[0] ** 2),
            ("f growth", f_pair[0] ** 2,
             bounds.f_0 + bounds.f_x * _sq(x[0]) + K * y[0] ** 2 + bounds.f_z * _sq(z[0])),
            ("g growth", g_pair[0] ** 2, bounds.g_0 + bounds.g_x * _sq(x[0])),
        ]
        for name, lhs, rhs in checks:
            if lhs > rhs + tol * (1.0 + abs(rhs)):
                violations.append(Violation(name, lhs, rhs, where))

    return ValidationReport(passed=not violations, n_probes=n_probes,
                            violations=violations)


# ---------------------------------------------------------------------------
# built-in problem catalog
# ---------------------------------------------------------------------------

def sine_example(
    D: int,
    sigma: float,
    r: float,
    x0_component: float = math.pi / 2,
    T: float = 1.0,
) -> FbsdeProblem:
    """D-dimensional benchmark with a sine terminal and Y-coupled diffusion.

    b = 0, sigma(t,x,y) = sigma*y*I, f(t,x,y,z) = -r*y
    + (1/2) e^{-3r(T-t)} sigma^2 (sum_d sin x_d)^3, g(x) = sum_d sin x_d.
    The diffusion degenerates at y = 0.  The system decouples through
    Y_t = e^{-r(T-t)} sum_d sin(X_{d,t}); starting every component at pi/2
    gives the exact initial value Y_0 = D e^{-rT}.
    """
    if D < 1:
        raise ValueError("D must be >= 1")
    if not (sigma > 0):
        raise ValueError("sigma must be positive")
    eye = np.eye(D)

    def drift(t, x, y):
        return np.zeros_like(x)

    def diffusion(t, x, y):
        return sigma * np.asarray(y)[:, None, None] * eye

    def driver(t, x, y, z):
        s = np.sin(x).sum(axis=1)
        return -r * np.asarray(y) + 0.5 * math.exp(-3.0 * r * (T - t)) * sigma ** 2 * s ** 3

    def terminal(x):
        return np.sin(x).sum(axis=1)

    return FbsdeProblem(
        dim_x=D, dim_w=D, horizon_T=T,
        x0=np.full(D, float(x0_component)),
        drift=drift, diffusion=diffusion, driver=driver, terminal=terminal,
        name=f"sine(D={D},sigma={sigma},r={r})",
    )


def sine_exact_y0(D: int, r: float, T: float = 1.0) -> float:
    """Exact initial value D*e^{-rT} of the sine benchmark started at pi/2."""
    return D * math.exp(-r * T)


def sine_bounds(D: int, sigma: float, r: float, T: float = 1.0) -> CoefficientBounds:
    """Valid coefficient constants for `sine_example` (Frobenius convention).

    Derivation sketch: sigma*y*I has Frobenius Lipschitz constant
    sigma*sqrt(D) in y, hence sigma_y = sigma^2 D.  The driver's x-gradient
    is bounded by L_x = 1.5 sigma^2 D^{5/2} (chain rule through
    s = sum sin x_d, |s| <= D, |grad s| <= sqrt(D)) and its y-slope by r;
    the mixed bound (L_x|dx| + r|dy|)^2 <= (L_x+r)(L_x|dx|^2 + r|dy|^2)
    gives f_x = L_x(L_x+r) with the y-part r(L_x+r) absorbed into K.
    Growth of the driver: |f| <= r|y| + w with w = sigma^2 D^3 / 2, so
    f_0 = w(r+w) and K also covers r(r+w).  g = sum sin has g_x = D and,
    since |sum sin x_d|^2 <= D |x|^2, g_0 = 0.
    """
    lx = 1.5 * sigma ** 2 * D ** 2.5
    w = 0.5 * sigma ** 2 * D ** 3
    sigma_y = sigma ** 2 * D
    f_x = lx * (lx + r)
    f_0 = w * (r + w)
    k_f = -r
    g_x = float(D)
    K = max(sigma_y, f_x, f_0, g_x, abs(k_f), r * (lx + r), r * (r + w))
    return CoefficientBounds(
        K_lip=K, k_b=0.0, k_f=k_f,
        b_y=0.0, sigma_x=0.0, sigma_y=sigma_y,
        f_x=f_x, f_z=0.0, g_x=g_x,
        b_0=0.0, sigma_0=0.0, f_0=f_0, g_0=0.0,
    )


def constant_drift_problem(D: int = 1, T: float = 1.0,
                           x0_component: float = 0.0) -> FbsdeProblem:
    """Diagnostic: unit drift, no noise, zero driver, linear terminal."""

    def drift(t, x, y):
        return np.ones_like(x)

    def diffusion(t, x, y):
        return np.zeros((x.shape[0], D, D))

    def driver(t, x, y, z):
        return np.zeros(x.shape[0])

    def terminal(x):
        return x.sum(axis=1)

    return FbsdeProblem(dim_x=D, dim_w=D, horizon_T=T,
                        x0=np.full(D, float(x0_component)),
                        drift=drift, diffusion=diffusion, driver=driver,
                        terminal=terminal, name=f"constant_drift(D={D})")


def constant_drift_bounds(D: int = 1) -> CoefficientBounds:
    K = float(max(D, 1))  # b_0 = D, g_x = D
    return CoefficientBounds(K_lip=K, g_x=float(D), b_0=float(D))


def brownian_terminal_problem(D: int = 1, T: float = 1.0,
                              x0_component: float = 0.0) -> FbsdeProblem:
    """Diagnostic: pure Brownian forward, zero driver, linear terminal.

    Decoupled with exact value function u(t, x) = sum_d x_d and control
    v(t, x) = (1, ..., 1): the Gaussian conditional-mean identities.
    """
    eye = np.eye(D)

    def drift(t, x, y):
        return np.zeros_like(x)

    def diffusion(t, x, y):
        return np.broadcast_to(eye, (x.shape[0], D, D)).copy()

    def driver(t, x, y, z):
        return np.zeros(x.shape[0])

    def terminal(x):
        return x.sum(axis=1)

    return FbsdeProblem(dim_x=D, dim_w=D, horizon_T=T,
                        x0=np.full(D, float(x0_component)),
                        drift=drift, diffusion=diffusion, driver=driver,
                        terminal=terminal, name=f"brownian_terminal(D={D})")


def brownian_terminal_bounds(D: int = 1) -> CoefficientBounds:
    K = float(max(D, 1))  # sigma_0 = |I|_F^2 = D, g_x = D
    return CoefficientBounds(K_lip=K, g_x=float(D), sigma_0=float(D))


def quadratic_terminal_problem(D: int = 1, T: float = 1.0,
                               x0_component: float = 0.0) -> FbsdeProblem:
    """Diagnostic: Brownian forward with terminal |x|^2.

    The terminal grows quadratically, so no valid global Lipschitz bounds
    exist for it; the exact solution u(t, x) = |x|^2 + D(T - t) makes it a
    useful oracle target regardless.
    """
    eye = np.eye(D)

    def drift(t, x, y):
        return np.zeros_like(x)

    def diffusion(t, x, y):
        return np.broadcast_to(eye, (x.shape[0], D, D)).copy()

    def driver(t, x, y, z):
        return np.zeros(x.shape[0])

    def terminal(x):
        return (x ** 2).sum(axis=1)

    return FbsdeProblem(dim_x=D, dim_w=D, horizon_T=T,
                        x0=np.full(D, float(x0_component)),
                        drift=drift, diffusion=diffusion, driver=driver,
                        terminal=terminal, name=f"quadratic_terminal(D={D})")


def linear_counterexample_problem(x0: float = 1.0) -> FbsdeProblem:
    """One-dimensional linear system with no solution at horizon 3*pi/4.

    dX = Y dt, dY = -X dt + Z dW, Y_T = -X_T, X_0 = x0 != 0.  The two-point
    boundary problem X'' = -X forces X_0 = 0 at this horizon, so no solution
    exists and the iteration cannot converge.
    """
    if x0 == 0.0:
        raise ValueError("x0 must be nonzero for the counterexample")
    T = 3.0 * math.pi / 4.0

    def drift(t, x, y):
        return np.asarray(y)[:, None] * np.ones((1, 1))

    def diffusion(t, x, y):
        return np.zeros((x.shape[0], 1, 1))

    def driver(t, x, y, z):
        return x[:, 0]

    def terminal(x):
        return -x[:, 0]

    return FbsdeProblem(dim_x=1, dim_w=1, horizon_T=T,
                        x0=np.array([float(x0)]),
                        drift=drift, diffusion=diffusion, driver=driver,
                        terminal=terminal, name="linear_counterexample")


def linear_counterexample_bounds() -> CoefficientBounds:
    return CoefficientBounds(K_lip=1.0, b_y=1.0, f_x=1.0, g_x=1.0)


_CATALOG = {
    "sine": "sine benchmark: Y-coupled diffusion, known Y_0 = D*e^{-rT}",
    "constant_drift": "unit drift, no noise; forward states are x0 + t",
    "brownian_terminal": "decoupled Brownian forward, linear terminal",
    "quadratic_terminal": "decoupled Brownian forward, |x|^2 terminal",
    "linear_counterexample": "linear system with no solution (divergence test)",
}


def catalog_names() -> list[str]:
    return sorted(_CATALOG)


def make_catalog_problem(
    name: str,
    D: int = 1,
    sigma: float = 0.1,
    r: float = 0.0,
    x0_component: float | None = None,
    T: float | None = None,
) -> tuple[FbsdeProblem, CoefficientBounds | None]:
    """Build a catalog problem and, when one exists, a valid set of bounds.

    `quadratic_terminal` returns bounds of None (its terminal admits no
    global Lipschitz constant); `linear_counterexample` ignores every
    parameter except x0_component.
    """
    if name == "sine":
        x0c = math.pi / 2 if x0_component is None else x0_component
        Tv = 1.0 if T is None else T
        return sine_example(D, sigma, r, x0c, Tv), sine_bounds(D, sigma, r, Tv)
    if name == "constant_drift":
        x0c = 0.0 if x0_component is None else x0_component
        Tv = 1.0 if T is None else T
        return constant_drift_problem(D, Tv, x0c), constant_drift_bounds(D)
    if name == "brownian_terminal":
        x0c = 0.0 if x0_component is None else x0_component
        Tv = 1.0 if T is None else T
        return brownian_terminal_problem(D, Tv, x0c), brownian_terminal_bounds(D)
    if name == "quadratic_terminal":
        x0c = 0.0 if x0_component is None else x0_component
        Tv = 1.0 if T is None else T
        return quadratic_terminal_problem(D, Tv, x0c), None
    if name == "linear_counterexample":
        x0c = 1.0 if x0_component is None else x0_component
        return linear_counterexample_problem(x0c), linear_counterexample_bounds()
    raise KeyError(f"unknown catalog problem {name!r}; known: {catalog_names()}")
