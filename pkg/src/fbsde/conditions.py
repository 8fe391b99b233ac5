"""Closed-form convergence constants and condition checks.

The solvability of the time-discretized coupled system and the geometric
convergence of the value-function iteration are governed by a family of
explicit constants built from the coefficient bounds: a Lipschitz-control
pair (L0, L1), a growth-control triple (c0, c1, L2) and a contraction
constant c2.  The conditions

    (I)   L0 < e^{-1}            uniform Lipschitz control of the iterates,
    (II)  c1(L1) < 1             uniform linear-growth control,
    (III) c2(L1, L1) < 1         contraction of the iteration map,

hold under weak coupling, strong monotonicity or a short horizon; (III)
implies (II).  When (III) holds the iteration error decays like m * c^m for
any c2(L1, L1) < c < 1.

Everything here is a pure function of immutable inputs.  Suprema/infima
over open intervals (theta inside Gamma1, lambda1 inside c2) are evaluated
on closed numeric grids (10^4 theta points, 200 log-spaced lambda1 points)
plus golden-section refinement; the returned values bound the exact ones
from below (suprema) respectively above (infima) up to a relative
refinement tolerance of about 1e-10.  Exponentials are allowed to overflow
to +inf, in which case the affected condition simply fails; nothing raises
on large inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import CoefficientBounds

__all__ = [
    "LambdaSchedule",
    "ConditionReport",
    "ScheduleInfeasibleError",
    "gamma0",
    "gamma1",
    "gamma0_discrete",
    "gamma1_discrete",
    "a_constants",
    "b_constants",
    "lambda_schedule",
    "max_feasible_h",
    "L0_L1",
    "c0_c1_L2",
    "c0_c1_L2_discrete",
    "c2",
    "c2_at_lambda",
    "c2_discrete",
    "check_conditions",
]

_SMALL = 1e-6          # Taylor branch threshold for the removable singularity
_THETA_POINTS = 10_000
_THETA_GRID = np.linspace(0.0, 1.0, _THETA_POINTS + 1)[1:]  # (0, 1]
_LAMBDA_GRID = np.logspace(-4.0, 4.0, 200)
_GOLDEN_TOL = 1e-12
_GOLDEN_ITERS = 200


class ScheduleInfeasibleError(ValueError):
    """The step size is too large for a positive damping weight."""


# ---------------------------------------------------------------------------
# growth-factor functions
# ---------------------------------------------------------------------------

def gamma0(x: float) -> float:
    """(e^x - 1)/x with the removable singularity at 0 filled by 1.

    Strictly increasing; tends to 0 as x -> -inf and overflows cleanly to
    +inf for very large x.
    """
    x = float(x)
    if math.isnan(x):
        return math.nan
    if math.isinf(x):
        return math.inf if x > 0 else 0.0
    if abs(x) < _SMALL:
        return 1.0 + x / 2.0 + x * x / 6.0
    try:
        return math.expm1(x) / x
    except OverflowError:
        return math.inf


def _gamma0_vec(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < _SMALL
    xs = x[small]
    out[small] = 1.0 + xs / 2.0 + xs * xs / 6.0
    with np.errstate(over="ignore", invalid="ignore"):
        xl = x[~small]
        vals = np.expm1(xl) / xl
    vals = np.where(np.isposinf(xl), np.inf, vals)
    vals = np.where(np.isneginf(xl), 0.0, vals)
    out[~small] = vals
    return out


def _gamma1_objective(theta: np.ndarray, x: float, y: float) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        return theta * np.exp(theta * x) * _gamma0_vec(theta * y)


def _golden_max(fun, lo: float, hi: float) -> float:
    """Golden-section maximum of a unimodal scalar function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    best = max(fc, fd)
    for _ in range(_GOLDEN_ITERS):
        if b - a < _GOLDEN_TOL * (1.0 + abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
        best = max(best, fc, fd)
    return best


def gamma1(x: float, y: float) -> float:
    """sup over theta in (0,1) of theta * e^{theta x} * gamma0(theta y).

    Evaluated on a 10^4-point theta grid (endpoint 1 included, which by
    continuity carries the open-interval supremum) followed by
    golden-section refinement around the best grid point.  The result is
    >= the objective at any probed theta, up to refinement tolerance.
    """
    x, y = float(x), float(y)
    if math.isnan(x) or math.isnan(y):
        return math.nan
    vals = _gamma1_objective(_THETA_GRID, x, y)
    if np.any(np.isposinf(vals)):
        return math.inf
    k = int(np.argmax(vals))
    lo = _THETA_GRID[max(k - 1, 0)]
    hi = _THETA_GRID[min(k + 1, _THETA_POINTS - 1)]

    def fun(theta):
        return float(_gamma1_objective(np.array([theta]), x, y)[0])

    return max(float(vals[k]), _golden_max(fun, lo, hi))


def _gamma1_grid_many(x: float, ys: np.ndarray) -> np.ndarray:
    """Grid-only gamma1 for one x and many y values (no refinement)."""
    theta = _THETA_GRID[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        vals = theta * np.exp(theta * x) * _gamma0_vec(theta * ys[None, :])
    return np.max(vals, axis=0)


def gamma0_discrete(i: int, x: float, h: float) -> float:
    """((1 + x h)^i - 1)/x with the x = 0 limit i*h."""
    if i < 0:
        raise ValueError("i must be >= 0")
    if i == 0:
        return 0.0
    x, h = float(x), float(h)
    if abs(x) < _SMALL:
        # Taylor in x: i*h + C(i,2) h^2 x + C(i,3) h^3 x^2
        return i * h + 0.5 * i * (i - 1) * h * h * x \
            + i * (i - 1) * (i - 2) / 6.0 * h ** 3 * x * x
    base = 1.0 + x * h
    try:
        if base > 0.0:
            return math.expm1(i * math.log1p(x * h)) / x
        return (base ** i - 1.0) / x
    except OverflowError:
        return math.inf if x > 0 else -math.inf


def _gamma0_discrete_all(n: int, x: float, h: float) -> np.ndarray:
    """gamma0_discrete(i, x, h) for every i = 0..n in one shot."""
    i = np.arange(n + 1, dtype=float)
    if abs(x) < _SMALL:
        return i * h + 0.5 * i * (i - 1.0) * h * h * x \
            + i * (i - 1.0) * (i - 2.0) / 6.0 * h ** 3 * x * x
    base = 1.0 + x * h
    with np.errstate(over="ignore", invalid="ignore"):
        if base > 0.0:
            powers = np.exp(i * math.log(base))
        else:
            powers = np.float_power(base, i)
        return (powers - 1.0) / x


def gamma1_discrete(n: int, x: float, y: float, h: float) -> float:
    """max over i = 0..n of (1 + x h)^i * gamma0_discrete(i, y, h)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return 0.0
    i = np.arange(n + 1, dtype=float)
    base = 1.0 + x * h
    with np.errstate(over="ignore", invalid="ignore"):
        if base > 0.0:
            growth = np.exp(i * math.log(base)) if base != 1.0 else np.ones_like(i)
        else:
            growth = np.float_power(base, i)
        vals = growth * _gamma0_discrete_all(n, y, h)
    vals = vals[np.isfinite(vals) | np.isposinf(vals)]
    return float(np.max(vals))


# ---------------------------------------------------------------------------
# step-size dependent constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaSchedule:
    """Weights (lambda1, lambda2, lambda3) splitting the one-step estimates."""

    lambda1: float
    lambda2: float
    lambda3: float

    def __post_init__(self):
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be >= 0")
        if not (self.lambda2 > 0 and self.lambda3 > 0):
            raise ValueError("lambda2 and lambda3 must be positive")


def max_feasible_h(K_lip: float) -> float:
    """Largest h with 1 - (1+K) sqrt(h) - K h > 0 (exclusive bound)."""
    if K_lip == 0.0:
        return 1.0
    s = (-(1.0 + K_lip) + math.sqrt((1.0 + K_lip) ** 2 + 4.0 * K_lip)) / (2.0 * K_lip)
    return s * s


def lambda_schedule(K_lip: float, h: float) -> LambdaSchedule:
    """Step-size dependent weights lambda1 = 0, lambda2 = sqrt(h),
    lambda3 = 1 - (1+K) sqrt(h) - K h.

    This choice makes the weight sum A3 equal 1 exactly.  Raises
    `ScheduleInfeasibleError` naming the maximal feasible h when lambda3
    would not be positive.
    """
    if not (h > 0):
        raise ValueError("h must be positive")
    lam2 = math.sqrt(h)
    lam3 = 1.0 - (1.0 + K_lip) * lam2 - K_lip * h
    if lam3 <= 0.0:
        raise ScheduleInfeasibleError(
            f"h = {h} too large for a positive lambda3 with K = {K_lip}; "
            f"requires h < {max_feasible_h(K_lip):.6g}")
    return LambdaSchedule(0.0, lam2, lam3)


def a_constants(bounds: CoefficientBounds, lam: LambdaSchedule,
                h: float) -> tuple[float, float, float, float, float]:
    """One-step estimate constants.

    A1 = 2 k_b + sigma_x + 1 + K h          (forward state sensitivity)
    A2 = b_y + sigma_y + K h                (forward coupling strength)
    A3 = lambda2 + lambda3 + (1 + 1/lambda2) K h
    A4 = 2 k_f + 1 + f_z/lambda3 + (1 + 1/lambda2) K h
    A5 = f_x + (1 + 1/lambda2) K h
    """
    if not (lam.lambda2 > 0 and lam.lambda3 > 0):
        raise ValueError("lambda2 and lambda3 must be positive")
    K = bounds.K_lip
    kh = K * h
    slack = (1.0 + 1.0 / lam.lambda2) * kh
    a1 = 2.0 * bounds.k_b + bounds.sigma_x + 1.0 + kh
    a2 = bounds.b_y + bounds.sigma_y + kh
    a3 = lam.lambda2 + lam.lambda3 + slack
    a4 = 2.0 * bounds.k_f + 1.0 + bounds.f_z / lam.lambda3 + slack
    a5 = bounds.f_x + slack
    return a1, a2, a3, a4, a5


def b_constants(bounds: CoefficientBounds, h: float) -> tuple[float, float]:
    """Inhomogeneity constants B1 = b_0 + sigma_0 + K b_0 h, B2 = f_0 + K f_0 h."""
    if h < 0:
        raise ValueError("h must be >= 0")
    K = bounds.K_lip
    return (bounds.b_0 + bounds.sigma_0 + K * bounds.b_0 * h,
            bounds.f_0 + K * bounds.f_0 * h)


# ---------------------------------------------------------------------------
# the convergence constants
# ---------------------------------------------------------------------------

def _exp_or_inf(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _coupled(coupling: float, G: float, T: float) -> float:
    # 0 * inf must read as 0: an uncoupled system has a vanishing term even
    # when the growth bound G blew up to +inf.
    return 0.0 if coupling == 0.0 else coupling * G * T


def L0_L1(bounds: CoefficientBounds, T: float) -> tuple[float, float]:
    """Lipschitz-control constants of the value-function iterates.

    With p = b_y + sigma_y and q = g_x + f_x T:

        L0 = p q T exp(p q T + (2 k_b + 2 k_f + 2 + sigma_x + f_z) T)
        L1 = q * max(exp(same exponent), 1)

    L0 < e^{-1} guarantees a uniform (in step count and iteration) squared
    Lipschitz constant L-bar for any L-bar > L1, once the step is small.
    """
    if not (T > 0):
        raise ValueError("T must be positive")
    p = bounds.b_y + bounds.sigma_y
    q = bounds.g_x + bounds.f_x * T
    expo = p * q * T + (2.0 * bounds.k_b + 2.0 * bounds.k_f + 2.0
                        + bounds.sigma_x + bounds.f_z) * T
    e = _exp_or_inf(expo)
    l0 = 0.0 if p * q == 0.0 else p * q * T * e
    l1 = q * max(e, 1.0)
    return l0, l1


def c0_c1_L2(bounds: CoefficientBounds, T: float,
             G: float) -> tuple[float, float, float]:
    """Growth-control constants at assumed squared-growth level G >= 0."""
    if not (T > 0):
        raise ValueError("T must be positive")
    if G < 0:
        raise ValueError("G must be >= 0")
    p = bounds.b_y + bounds.sigma_y
    a = (2.0 * bounds.k_f + 1.0 + bounds.f_z) * T
    b = (2.0 * bounds.k_b + 1.0 + bounds.sigma_x) * T + _coupled(p, G, T)
    c0 = T * (bounds.g_x * gamma1(a, b)
              + bounds.f_x * T * gamma0(a) * gamma0(b))
    c1 = 0.0 if p == 0.0 else p * c0
    b0s0 = bounds.b_0 + bounds.sigma_0
    l2 = (_exp_or_inf(max(2.0 * bounds.k_f + 1.0 + bounds.f_z, 0.0) * T) * bounds.g_0
          + bounds.f_0 * T * gamma0(a)
          + (0.0 if b0s0 == 0.0 else b0s0 * c0))
    return c0, c1, l2


def c2_at_lambda(bounds: CoefficientBounds, T: float, lam1: float,
                 L: float, G: float) -> float:
    """Contraction constant for one fixed splitting weight lambda1 > 0."""
    if not (lam1 > 0):
        raise ValueError("lambda1 must be positive")
    p = bounds.b_y + bounds.sigma_y
    if p == 0.0:
        return 0.0
    a = (2.0 * bounds.k_f + 1.0 + bounds.f_z) * T
    b = (2.0 * bounds.k_b + 1.0 + bounds.sigma_x) * T \
        + _coupled((1.0 + lam1) * p, L, T)
    pref = max(_exp_or_inf((2.0 * bounds.k_b + 1.0 + bounds.sigma_x) * T
                           + _coupled(p, G, T)), 1.0)
    bracket = bounds.g_x * gamma1(a, b) + bounds.f_x * T * gamma0(a) * gamma0(b)
    if bracket == 0.0:
        return 0.0
    return pref * (1.0 + 1.0 / lam1) * p * T * bracket


def c2(bounds: CoefficientBounds, T: float, L: float, G: float) -> float:
    """inf over lambda1 > 0 of `c2_at_lambda`.

    Scanned on 200 log-spaced lambda1 in [1e-4, 1e4] (grid values computed
    with the grid-only theta maximum for speed) and refined by golden
    section around the best candidate; the final value is a full
    `c2_at_lambda` evaluation, so it exceeds the grid scan only by the
    theta-refinement tolerance.
    """
    if not (T > 0):
        raise ValueError("T must be positive")
    if L < 0 or G < 0:
        raise ValueError("L and G must be >= 0")
    p = bounds.b_y + bounds.sigma_y
    if p == 0.0:
        return 0.0
    if bounds.g_x == 0.0 and bounds.f_x == 0.0:
        return 0.0

    a = (2.0 * bounds.k_f + 1.0 + bounds.f_z) * T
    bs = ((2.0 * bounds.k_b + 1.0 + bounds.sigma_x) * T
          + (1.0 + _LAMBDA_GRID) * p * L * T)
    pref = max(_exp_or_inf((2.0 * bounds.k_b + 1.0 + bounds.sigma_x) * T
                           + _coupled(p, G, T)), 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        brackets = (bounds.g_x * _gamma1_grid_many(a, bs)
                    + bounds.f_x * T * gamma0(a) * _gamma0_vec(bs))
        grid_vals = pref * (1.0 + 1.0 / _LAMBDA_GRID) * p * T * brackets
    grid_vals = np.where(np.isnan(grid_vals), np.inf, grid_vals)
    k = int(np.argmin(grid_vals))
    if not np.isfinite(grid_vals[k]):
        return math.inf

    lo = math.log(_LAMBDA_GRID[max(k - 1, 0)])
    hi = math.log(_LAMBDA_GRID[min(k + 1, len(_LAMBDA_GRID) - 1)])

    def neg(loglam):
        return -c2_at_lambda(bounds, T, math.exp(loglam), L, G)

    refined = -_golden_max(neg, lo, hi)
    return min(c2_at_lambda(bounds, T, float(_LAMBDA_GRID[k]), L, G), refined)


def c2_discrete(bounds: CoefficientBounds, n: int, T: float, lam1: float,
                L: float, G: float) -> float:
    """Step-count version of `c2_at_lambda` built from the discrete
    growth factors and the step-size dependent constants.

    Converges to `c2_at_lambda(bounds, T, lam1, L, G)` as n -> inf.
    Raises `ScheduleInfeasibleError` when h = T/n is too large.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not (lam1 > 0):
        raise ValueError("lambda1 must be positive")
    h = T / n
    lam = lambda_schedule(bounds.K_lip, h)
    a1, a2, _, a4, a5 = a_constants(bounds, lam, h)
    if a2 == 0.0:
        return 0.0
    pref = max(_exp_or_inf((a1 + a2 * G) * T), 1.0)
    arg = a1 + (1.0 + lam1) * a2 * L
    bracket = (bounds.g_x * gamma1_discrete(n, a4, arg, h)
               + a5 * gamma0_discrete(n, a4, h) * gamma0_discrete(n, arg, h))
    return pref * (1.0 + 1.0 / lam1) * a2 * bracket


def c0_c1_L2_discrete(bounds: CoefficientBounds, n: int, T: float,
                      G: float) -> tuple[float, float, float]:
    """Step-count versions of (c0, c1, L2); converge to the continuous
    constants as n -> inf."""
    if n < 1:
        raise ValueError("n must be >= 1")
    h = T / n
    lam = lambda_schedule(bounds.K_lip, h)
    a1, a2, _, a4, a5 = a_constants(bounds, lam, h)
    b1, b2 = b_constants(bounds, h)
    arg = a1 + a2 * G
    c0d = (bounds.g_x * gamma1_discrete(n, a4, arg, h)
           + a5 * gamma0_discrete(n, a4, h) * gamma0_discrete(n, arg, h))
    c1d = a2 * c0d
    l2d = (b1 * c0d if b1 > 0.0 else 0.0) \
        + max(_exp_or_inf(a4 * T), 1.0) * bounds.g_0 \
        + b2 * gamma0_discrete(n, a4, h)
    return c0d, c1d, l2d


# ---------------------------------------------------------------------------
# the combined report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionReport:
    """All convergence constants plus pass/fail flags for one bound set."""

    L0: float
    L1: float
    condition_3_2_holds: bool
    c1_at_L1: float
    L2_at_L1: float
    condition_4_2_holds: bool
    c2_at_L1: float
    condition_5_1_holds: bool
    predicted_rate: float
    bound_L_bar: float
    bound_G_bar: float
    bound_H_bar: float
    max_feasible_h: float

    def to_json_dict(self) -> dict:
        return {
            "l0": self.L0,
            "l1": self.L1,
            "c1": self.c1_at_L1,
            "l2": self.L2_at_L1,
            "c2": self.c2_at_L1,
            "cond_3_2": self.condition_3_2_holds,
            "cond_4_2": self.condition_4_2_holds,
            "cond_5_1": self.condition_5_1_holds,
            "rate": self.predicted_rate,
            "l_bar": self.bound_L_bar,
            "g_bar": self.bound_G_bar,
            "h_bar": self.bound_H_bar,
        }

    def to_text(self) -> str:
        def flag(ok):
            return "holds" if ok else "FAILS"

        lines = [
            f"{'L0':<22}{self.L0:.17g}",
            f"{'L1':<22}{self.L1:.17g}",
            f"{'L0 < 1/e':<22}{flag(self.condition_3_2_holds)}",
            f"{'c1(L1)':<22}{self.c1_at_L1:.17g}",
            f"{'L2(L1)':<22}{self.L2_at_L1:.17g}",
            f"{'c1(L1) < 1':<22}{flag(self.condition_4_2_holds)}",
            f"{'c2(L1, L1)':<22}{self.c2_at_L1:.17g}",
            f"{'c2(L1, L1) < 1':<22}{flag(self.condition_5_1_holds)}",
            f"{'predicted rate':<22}{self.predicted_rate:.17g}",
            f"{'L bar':<22}{self.bound_L_bar:.17g}",
            f"{'G bar':<22}{self.bound_G_bar:.17g}",
            f"{'H bar':<22}{self.bound_H_bar:.17g}",
            f"{'max feasible h':<22}{self.max_feasible_h:.17g}"
            "  (positivity of lambda3; heuristic proxy for 'h small enough')",
        ]
        return "\n".join(lines)


def check_conditions(bounds: CoefficientBounds, T: float,
                     slack: float = 0.01) -> ConditionReport:
    """Evaluate every convergence constant and flag the three conditions.

    Failures are report flags, never exceptions; overflowing constants
    saturate to +inf and fail their condition.  The reported bounds use the
    multiplicative `slack` above L1 (the theory allows any value strictly
    above), and the predicted contraction rate is the midpoint of
    (c2(L1, L1), 1) since any rate strictly between them is admissible.
    """
    l0, l1 = L0_L1(bounds, T)
    cond32 = l0 < math.exp(-1.0)
    _, c1v, l2v = c0_c1_L2(bounds, T, l1)
    cond42 = c1v < 1.0
    c2v = c2(bounds, T, l1, l1)
    cond51 = c2v < 1.0
    h_bar = l2v / (1.0 - c1v) if cond42 else math.inf
    rate = (c2v + 1.0) / 2.0 if math.isfinite(c2v) else math.inf
    return ConditionReport(
        L0=l0, L1=l1, condition_3_2_holds=cond32,
        c1_at_L1=c1v, L2_at_L1=l2v, condition_4_2_holds=cond42,
        c2_at_L1=c2v, condition_5_1_holds=cond51,
        predicted_rate=rate,
        bound_L_bar=(1.0 + slack) * l1,
        bound_G_bar=(1.0 + slack) * l1,
        bound_H_bar=h_bar,
        max_feasible_h=max_feasible_h(bounds.K_lip),
    )
