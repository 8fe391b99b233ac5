import math

import numpy as np
import pytest

from fbsde.model import (CoefficientBounds, FbsdeProblem, Grid,
                         brownian_terminal_problem, catalog_names,
                         constant_drift_problem, linear_counterexample_problem,
                         make_catalog_problem, quadratic_terminal_problem,
                         sine_bounds, sine_example, sine_exact_y0,
                         validate_problem)


def _zero_problem(D=1):
    return FbsdeProblem(
        dim_x=D, dim_w=D, horizon_T=1.0, x0=np.zeros(D),
        drift=lambda t, x, y: np.zeros_like(x),
        diffusion=lambda t, x, y: np.zeros((x.shape[0], D, D)),
        driver=lambda t, x, y, z: np.zeros(x.shape[0]),
        terminal=lambda x: np.zeros(x.shape[0]))


class TestProblemTypes:
    def test_dimension_validation(self):
        with pytest.raises(ValueError):
            _zero_problem(0)
        with pytest.raises(ValueError):
            FbsdeProblem(dim_x=1, dim_w=1, horizon_T=-1.0, x0=np.zeros(1),
                         drift=None, diffusion=None, driver=None,
                         terminal=None)

    def test_x0_shape_checked(self):
        with pytest.raises(ValueError):
            FbsdeProblem(dim_x=2, dim_w=2, horizon_T=1.0, x0=np.zeros(3),
                         drift=lambda t, x, y: x,
                         diffusion=lambda t, x, y: x,
                         driver=lambda t, x, y, z: y,
                         terminal=lambda x: x[:, 0])

    def test_bounds_must_stay_below_k(self):
        CoefficientBounds(K_lip=2.0, g_x=2.0, k_f=-2.0)
        with pytest.raises(ValueError):
            CoefficientBounds(K_lip=1.0, g_x=2.0)
        with pytest.raises(ValueError):
            CoefficientBounds(K_lip=1.0, k_f=-3.0)
        with pytest.raises(ValueError):
            CoefficientBounds(K_lip=1.0, b_y=-0.5)

    def test_grid(self):
        g = Grid(n=7, horizon_T=2.0)
        assert g.times[0] == 0.0
        assert g.times[-1] == pytest.approx(2.0, abs=1e-15)
        assert g.h * g.n == pytest.approx(2.0, abs=1e-15)
        with pytest.raises(ValueError):
            Grid(n=0, horizon_T=1.0)


class TestValidateProblem:
    def test_zero_problem_zero_bounds_pass(self):
        report = validate_problem(_zero_problem(), CoefficientBounds(K_lip=0.0),
                                  n_probes=200)
        assert report.passed
        assert report.n_probes == 200

    def test_sine_problem_passes(self):
        problem = sine_example(1, 0.1, 0.0)
        report = validate_problem(problem, sine_bounds(1, 0.1, 0.0),
                                  n_probes=1000, seed=3)
        assert report.passed, report.summary()

    def test_sine_never_violates_f_in_z(self):
        # the driver ignores z, so f_z = 0 can never be falsified
        problem = sine_example(3, 0.4, 0.5)
        report = validate_problem(problem, sine_bounds(3, 0.4, 0.5),
                                  n_probes=500, seed=11)
        assert not any("f" in v.inequality and "z" in v.detail
                       for v in report.violations)
        assert report.passed, report.summary()

    def test_quadratic_terminal_beats_linear_growth(self):
        problem = quadratic_terminal_problem(1)
        bounds = CoefficientBounds(K_lip=1.0, sigma_0=1.0, g_x=1.0)
        report = validate_problem(problem, bounds, n_probes=400, seed=0)
        assert not report.passed
        assert any(v.inequality == "g growth" for v in report.violations)

    def test_non_finite_output_is_hard_violation(self):
        problem = FbsdeProblem(
            dim_x=1, dim_w=1, horizon_T=1.0, x0=np.zeros(1),
            drift=lambda t, x, y: np.zeros_like(x),
            diffusion=lambda t, x, y: np.zeros((x.shape[0], 1, 1)),
            driver=lambda t, x, y, z: np.zeros(x.shape[0]),
            terminal=lambda x: np.full(x.shape[0], np.inf))
        report = validate_problem(problem, CoefficientBounds(K_lip=0.0),
                                  n_probes=10)
        assert not report.passed
        assert any(v.inequality == "finiteness" for v in report.violations)


class TestSineExample:
    def test_invalid_dimension(self):
        with pytest.raises(ValueError):
            sine_example(0, 0.1, 0.0)

    def test_exact_initial_values(self):
        # started at pi/2 per component the terminal sums to D, so the
        # decoupling relation gives Y_0 = D e^{-rT}
        assert sine_exact_y0(4, 0.0) == pytest.approx(4.0)
        assert sine_exact_y0(1, 0.0) == pytest.approx(1.0)
        assert sine_exact_y0(10, 1.0) == pytest.approx(10 * math.exp(-1.0))
        assert sine_exact_y0(10, 1.0) == pytest.approx(3.678794, abs=1e-6)

    def test_terminal_at_start(self):
        for D in (1, 4, 10):
            problem = sine_example(D, 0.1, 0.0)
            g0 = problem.terminal(problem.x0[None, :])
            assert g0[0] == pytest.approx(D, abs=1e-12)

    def test_diffusion_degenerates_at_zero(self):
        problem = sine_example(3, 0.4, 0.2)
        x = np.random.default_rng(0).normal(size=(5, 3))
        s = problem.diffusion(0.3, x, np.zeros(5))
        assert np.all(s == 0.0)

    def test_driver_time_decay(self):
        problem = sine_example(2, 0.3, 1.0, T=1.0)
        x = np.full((1, 2), math.pi / 2)
        f_at_T = problem.driver(1.0, x, np.zeros(1), np.zeros((1, 2)))
        # at t = T the exponential factor is 1
        assert f_at_T[0] == pytest.approx(0.5 * 0.3 ** 2 * 2 ** 3)


class TestCatalog:
    def test_names(self):
        assert set(catalog_names()) == {
            "sine", "constant_drift", "brownian_terminal",
            "quadratic_terminal", "linear_counterexample"}

    def test_unknown_name(self):
        with pytest.raises(KeyError):
            make_catalog_problem("nope")

    def test_bounds_validate_against_their_problems(self):
        for name in ("sine", "constant_drift", "brownian_terminal",
                     "linear_counterexample"):
            problem, bounds = make_catalog_problem(name, D=2, sigma=0.3, r=0.5)
            assert bounds is not None
            report = validate_problem(problem, bounds, n_probes=300, seed=7)
            assert report.passed, f"{name}: {report.summary()}"

    def test_quadratic_terminal_has_no_bounds(self):
        _, bounds = make_catalog_problem("quadratic_terminal")
        assert bounds is None

    def test_counterexample_requires_nonzero_start(self):
        with pytest.raises(ValueError):
            linear_counterexample_problem(0.0)
        problem, _ = make_catalog_problem("linear_counterexample")
        assert problem.horizon_T == pytest.approx(3 * math.pi / 4)

    def test_constant_drift_shapes(self):
        problem = constant_drift_problem(3)
        x = np.zeros((4, 3))
        assert problem.drift(0.0, x, np.zeros(4)).shape == (4, 3)
        assert problem.diffusion(0.0, x, np.zeros(4)).shape == (4, 3, 3)

    def test_brownian_terminal_linear(self):
        problem = brownian_terminal_problem(2)
        x = np.array([[1.0, 2.0], [0.5, -0.5]])
        assert np.allclose(problem.terminal(x), [3.0, 0.0])
