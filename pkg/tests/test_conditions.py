import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbsde.conditions import (LambdaSchedule, ScheduleInfeasibleError,
                              a_constants, b_constants, c0_c1_L2,
                              c0_c1_L2_discrete, c2, c2_at_lambda, c2_discrete,
                              check_conditions, gamma0, gamma0_discrete,
                              gamma1, gamma1_discrete, lambda_schedule,
                              max_feasible_h, L0_L1)
from fbsde.model import CoefficientBounds, sine_bounds

COUNTEREXAMPLE = CoefficientBounds(K_lip=1.0, b_y=1.0, f_x=1.0, g_x=1.0)
COUNTEREXAMPLE_T = 3 * math.pi / 4


def random_bounds(rng) -> CoefficientBounds:
    vals = rng.uniform(0.0, 2.0, size=10)
    k_b, k_f = rng.uniform(-2.0, 1.0, size=2)
    K = max(*vals, abs(k_b), abs(k_f), rng.uniform(0.5, 3.0))
    return CoefficientBounds(K_lip=K, k_b=k_b, k_f=k_f,
                             b_y=vals[0], sigma_x=vals[1], sigma_y=vals[2],
                             f_x=vals[3], f_z=vals[4], g_x=vals[5],
                             b_0=vals[6], sigma_0=vals[7], f_0=vals[8],
                             g_0=vals[9])


class TestGamma0:
    def test_values(self):
        assert gamma0(0.0) == 1.0
        assert gamma0(1.0) == pytest.approx(math.e - 1, rel=1e-14)
        assert gamma0(-50.0) == pytest.approx((1 - math.exp(-50)) / 50, rel=1e-14)

    def test_limits(self):
        assert gamma0(-1e6) < 1e-5
        assert gamma0(1e4) == math.inf
        assert gamma0(math.inf) == math.inf
        assert gamma0(-math.inf) == 0.0

    def test_series_branch_agrees_with_direct_formula(self):
        # just below the Taylor threshold both formulas must coincide
        x = 0.999e-6
        assert gamma0(x) == pytest.approx(math.expm1(x) / x, rel=1e-13)

    @given(st.floats(-30, 30), st.floats(1e-8, 30))
    @settings(max_examples=200, deadline=None)
    def test_strictly_increasing(self, x, gap):
        assert gamma0(x) < gamma0(x + gap)


class TestGamma1:
    def test_at_origin(self):
        assert gamma1(0.0, 0.0) == pytest.approx(1.0, rel=1e-12)

    def test_one_one(self):
        # theta e^theta Gamma0(theta) = e^{2 theta} - e^theta, increasing
        assert gamma1(1.0, 1.0) == pytest.approx(math.e ** 2 - math.e,
                                                 rel=1e-10)

    def test_one_one_against_dense_grid(self):
        theta = np.linspace(1e-9, 1.0, 1_000_001)
        dense = np.max(theta * np.exp(theta) * np.expm1(theta) / theta)
        assert gamma1(1.0, 1.0) >= dense - 1e-12
        assert gamma1(1.0, 1.0) == pytest.approx(dense, rel=1e-9)

    def test_vanishes_as_y_drops(self):
        assert gamma1(3.0, -1e8) < 1e-6

    @given(st.floats(-5, 5), st.floats(-5, 5),
           st.floats(0.001, 0.999))
    @settings(max_examples=200, deadline=None)
    def test_dominates_probed_theta(self, x, y, theta):
        probe = theta * math.exp(theta * x) * gamma0(theta * y)
        assert gamma1(x, y) >= probe - 1e-9 * (1 + abs(probe))

    def test_nondecreasing_in_both_arguments(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x, y = rng.uniform(-4, 4, size=2)
            dx, dy = rng.uniform(0.01, 1.0, size=2)
            base = gamma1(x, y)
            slack = 1e-9 * (1 + abs(base))
            assert gamma1(x + dx, y) >= base - slack
            assert gamma1(x, y + dy) >= base - slack


class TestDiscreteGammas:
    def test_base_cases(self):
        assert gamma0_discrete(0, 123.0, 0.1) == 0.0
        assert gamma0_discrete(5, 0.0, 0.1) == pytest.approx(0.5, rel=1e-14)
        assert gamma0_discrete(2, 1.0, 0.5) == pytest.approx(1.25, rel=1e-14)

    def test_negative_base(self):
        # 1 + x h < 0 still evaluates through the signed power
        val = gamma0_discrete(3, -30.0, 0.1)
        assert val == pytest.approx(((1 - 3.0) ** 3 - 1) / -30.0, rel=1e-12)

    def test_limit_to_continuous_with_cauchy_rate(self):
        x, T = 0.7, 2.0
        target = T * gamma0(x * T)
        errs = [abs(gamma0_discrete(n, x, T / n) - target)
                for n in (100, 1000, 10000)]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 1e-3 * abs(target)
        # first-order rate: error shrinks ~10x per 10x more steps
        assert errs[0] / errs[1] == pytest.approx(10.0, rel=0.2)

    def test_gamma1_discrete_base_cases(self):
        assert gamma1_discrete(0, 1.0, 1.0, 0.1) == 0.0
        assert gamma1_discrete(10, 0.0, 0.0, 0.1) == pytest.approx(1.0,
                                                                   rel=1e-14)

    def test_gamma1_discrete_limit(self):
        x, y, T, n = 0.8, 1.3, 1.0, 10_000
        target = T * gamma1(x * T, y * T)
        val = gamma1_discrete(n, x, y, T / n)
        assert val == pytest.approx(target, rel=1e-3)


class TestStepConstants:
    def test_a_constants_zero_bounds(self):
        lam = LambdaSchedule(0.0, 0.3, 0.4)
        a = a_constants(CoefficientBounds(K_lip=0.0), lam, 0.1)
        assert a == (1.0, 0.0, 0.7, 1.0, 0.0)

    def test_a_constants_direct(self):
        bounds = CoefficientBounds(K_lip=1.0, k_b=0.0, sigma_x=1.0)
        lam = LambdaSchedule(0.0, 1.0, 1.0)
        a1, *_ = a_constants(bounds, lam, 0.01)
        assert a1 == pytest.approx(2.01, rel=1e-14)

    @given(st.floats(0.0, 5.0), st.floats(1e-4, 0.02))
    @settings(max_examples=200, deadline=None)
    def test_schedule_makes_a3_exactly_one(self, K, h):
        bounds = CoefficientBounds(K_lip=K)
        lam = lambda_schedule(K, h)
        a3 = a_constants(bounds, lam, h)[2]
        assert a3 == pytest.approx(1.0, abs=1e-12)

    def test_b_constants(self):
        assert b_constants(CoefficientBounds(K_lip=0.0), 0.5) == (0.0, 0.0)
        b1, b2 = b_constants(
            CoefficientBounds(K_lip=4.0, b_0=1.0, sigma_0=2.0, f_0=4.0), 0.1)
        assert b1 == pytest.approx(1.0 + 2.0 + 4.0 * 1.0 * 0.1, rel=1e-14)
        assert b2 == pytest.approx(4.0 + 4.0 * 4.0 * 0.1, rel=1e-14)
        b1, b2 = b_constants(
            CoefficientBounds(K_lip=1.0, b_0=1.0, sigma_0=1.0, f_0=1.0), 0.1)
        assert b1 == pytest.approx(2.1, rel=1e-14)
        assert b2 == pytest.approx(1.1, rel=1e-14)

    def test_lambda_schedule_values(self):
        s = lambda_schedule(1.0, 0.01)
        assert (s.lambda1, s.lambda2) == (0.0, 0.1)
        assert s.lambda3 == pytest.approx(0.79, rel=1e-14)
        s = lambda_schedule(0.0, 0.25)
        assert (s.lambda2, s.lambda3) == (0.5, 0.5)

    def test_lambda_schedule_infeasible(self):
        with pytest.raises(ScheduleInfeasibleError) as err:
            lambda_schedule(1.0, 0.25)
        assert f"{max_feasible_h(1.0):.6g}" in str(err.value)
        assert max_feasible_h(0.0) == 1.0


class TestL0L1:
    def test_decoupled_is_zero(self):
        bounds = CoefficientBounds(K_lip=1.0, g_x=1.0, f_x=1.0)
        l0, l1 = L0_L1(bounds, 1.0)
        assert l0 == 0.0
        assert l0 < math.exp(-1)

    def test_small_horizon(self):
        bounds = CoefficientBounds(K_lip=1.0, b_y=1.0, g_x=1.0)
        l0, _ = L0_L1(bounds, 1e-9)
        assert l0 < 1e-8

    def test_counterexample_fails(self):
        # direct arithmetic oracle: p q T e^{p q T + 2T}
        p, q, T = 1.0, 1.0 + COUNTEREXAMPLE_T, COUNTEREXAMPLE_T
        expected = p * q * T * math.exp(p * q * T + 2.0 * T)
        l0, l1 = L0_L1(COUNTEREXAMPLE, COUNTEREXAMPLE_T)
        assert l0 == pytest.approx(expected, rel=1e-12)
        assert 1e6 < l0 < 1e7
        assert l0 > math.exp(-1)

    def test_overflow_is_inf_not_crash(self):
        big = CoefficientBounds(K_lip=1e6, b_y=1e6, g_x=1e6, f_x=1e6)
        l0, l1 = L0_L1(big, 10.0)
        assert l0 == math.inf and l1 == math.inf


class TestGrowthConstants:
    def test_weak_backward_coupling(self):
        bounds = CoefficientBounds(K_lip=2.0, b_y=1.0, sigma_y=1.0)
        c0v, c1v, _ = c0_c1_L2(bounds, 1.0, 3.0)
        assert c0v == 0.0 and c1v == 0.0

    def test_weak_forward_coupling(self):
        bounds = CoefficientBounds(K_lip=2.0, g_x=1.0, f_x=1.0)
        _, c1v, _ = c0_c1_L2(bounds, 1.0, 3.0)
        assert c1v == 0.0

    def test_sine_benchmark_passes(self):
        bounds = sine_bounds(1, 0.1, 0.0)
        _, l1 = L0_L1(bounds, 1.0)
        _, c1v, _ = c0_c1_L2(bounds, 1.0, l1)
        assert c1v < 1.0
        # hand-checked magnitude: (b_y + sigma_y) * c0 with c0 ~ 4.88
        assert 0.04 < c1v < 0.06


class TestContractionConstant:
    def test_uncoupled_cases_are_zero(self):
        assert c2(CoefficientBounds(K_lip=1.0, g_x=1.0, f_x=1.0),
                  1.0, 2.0, 2.0) == 0.0
        assert c2(CoefficientBounds(K_lip=1.0, b_y=1.0, sigma_y=0.0),
                  1.0, 2.0, 2.0) == 0.0

    def test_sine_benchmark_below_one(self):
        bounds = sine_bounds(1, 0.1, 0.0)
        _, l1 = L0_L1(bounds, 1.0)
        val = c2(bounds, 1.0, l1, l1)
        assert val < 1.0
        assert 0.15 < val < 0.35

    def test_infimum_below_probed_lambdas(self):
        bounds = sine_bounds(1, 0.1, 0.0)
        _, l1 = L0_L1(bounds, 1.0)
        inf_val = c2(bounds, 1.0, l1, l1)
        rng = np.random.default_rng(1)
        for lam in np.exp(rng.uniform(math.log(1e-4), math.log(1e4), 25)):
            probe = c2_at_lambda(bounds, 1.0, lam, l1, l1)
            assert inf_val <= probe * (1 + 1e-9) + 1e-15

    def test_dominates_c1(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            bounds = random_bounds(rng)
            _, l1 = L0_L1(bounds, 1.0)
            if not math.isfinite(l1):
                continue
            _, c1v, _ = c0_c1_L2(bounds, 1.0, l1)
            c2v = c2(bounds, 1.0, l1, l1)
            assert c2v >= c1v * (1 - 1e-9) - 1e-12


class TestDiscreteConstants:
    def test_uncoupled_zero(self):
        bounds = CoefficientBounds(K_lip=0.0)
        assert c2_discrete(bounds, 50, 1.0, 1.0, 2.0, 2.0) == 0.0

    # The schedule puts a (1 + 1/sqrt(h)) K h ~ K sqrt(h) slack into the
    # step constants, so the composite discrete constants approach their
    # continuous limits at rate sqrt(h), not h: the relative gap at n = 1e4
    # sits near 0.5 sqrt(h) even for tiny K.  Only the raw growth factors
    # converge at rate h (see TestDiscreteGammas for their 1e-3 check).
    SMALL_K = CoefficientBounds(K_lip=0.01, b_y=0.005, g_x=0.01, f_x=0.005)

    def test_limit_to_continuous_sqrt_h_envelope(self):
        bounds = self.SMALL_K
        _, l1 = L0_L1(bounds, 1.0)
        lam1 = 2.0
        target = c2_at_lambda(bounds, 1.0, lam1, l1, l1)
        gaps = [abs(c2_discrete(bounds, n, 1.0, lam1, l1, l1) - target) / target
                for n in (100, 1_000, 10_000, 100_000)]
        assert gaps[0] > gaps[1] > gaps[2] > gaps[3]
        for n, gap in zip((100, 1_000, 10_000, 100_000), gaps):
            assert gap < 0.7 * math.sqrt(1.0 / n)

    def test_c0_c1_l2_limit_sqrt_h_envelope(self):
        bounds = self.SMALL_K
        _, l1 = L0_L1(bounds, 1.0)
        c0t, c1t, l2t = c0_c1_L2(bounds, 1.0, l1)
        c0d, c1d, l2d = c0_c1_L2_discrete(bounds, 100_000, 1.0, l1)
        assert c0d == pytest.approx(c0t, rel=2e-3)
        assert c1d == pytest.approx(c1t, rel=2e-3)
        assert l2d == pytest.approx(l2t, rel=2e-3)

    def test_sine_discrete_value_locked(self):
        # golden value of this implementation at n = 50 (self-oracle); the
        # coarse-step constant exceeds its continuous limit by design
        bounds = sine_bounds(1, 0.1, 0.0)
        _, l1 = L0_L1(bounds, 1.0)
        val = c2_discrete(bounds, 50, 1.0, 2.0, l1, l1)
        assert val == pytest.approx(1.3631800703617358, rel=1e-9)

    def test_infeasible_schedule_propagates(self):
        bounds = CoefficientBounds(K_lip=5.0, b_y=1.0, g_x=1.0)
        with pytest.raises(ScheduleInfeasibleError):
            c2_discrete(bounds, 2, 1.0, 1.0, 1.0, 1.0)


class TestCheckConditions:
    def test_all_zero_bounds(self):
        report = check_conditions(CoefficientBounds(K_lip=0.0), 1.0)
        assert report.condition_3_2_holds
        assert report.condition_4_2_holds
        assert report.condition_5_1_holds
        assert report.c2_at_L1 == 0.0
        assert report.predicted_rate == pytest.approx(0.5)

    def test_counterexample_fails_lipschitz_condition(self):
        report = check_conditions(COUNTEREXAMPLE, COUNTEREXAMPLE_T)
        assert not report.condition_3_2_holds

    def test_sine_benchmark_all_hold(self):
        report = check_conditions(sine_bounds(1, 0.1, 0.0), 1.0)
        assert report.condition_3_2_holds
        assert report.condition_4_2_holds
        assert report.condition_5_1_holds
        assert report.bound_H_bar == pytest.approx(
            report.L2_at_L1 / (1 - report.c1_at_L1))
        assert report.bound_L_bar == pytest.approx(1.01 * report.L1)

    def test_implication_on_random_bounds(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            report = check_conditions(random_bounds(rng), 1.0)
            if report.condition_5_1_holds:
                assert report.condition_4_2_holds

    def test_monotone_in_stronger_driver_monotonicity(self):
        # decreasing k_f never increases any constant
        rng = np.random.default_rng(5)
        for _ in range(30):
            bounds = random_bounds(rng)
            stronger = CoefficientBounds(
                K_lip=max(bounds.K_lip, abs(bounds.k_f - 1.0)),
                k_b=bounds.k_b, k_f=bounds.k_f - 1.0, b_y=bounds.b_y,
                sigma_x=bounds.sigma_x, sigma_y=bounds.sigma_y,
                f_x=bounds.f_x, f_z=bounds.f_z, g_x=bounds.g_x,
                b_0=bounds.b_0, sigma_0=bounds.sigma_0, f_0=bounds.f_0,
                g_0=bounds.g_0)
            base = check_conditions(bounds, 1.0)
            better = check_conditions(stronger, 1.0)
            slack = 1e-9
            if math.isfinite(base.L0):
                assert better.L0 <= base.L0 * (1 + slack) + slack
            if math.isfinite(base.c1_at_L1):
                assert better.c1_at_L1 <= base.c1_at_L1 * (1 + slack) + slack
            if math.isfinite(base.c2_at_L1):
                assert better.c2_at_L1 <= base.c2_at_L1 * (1 + slack) + slack

    def test_overflowing_bounds_fail_cleanly(self):
        big = CoefficientBounds(K_lip=1e8, b_y=1e8, sigma_y=1e8, g_x=1e8,
                                f_x=1e8, b_0=1e8, g_0=1e8)
        report = check_conditions(big, 5.0)
        assert not report.condition_3_2_holds
        assert not report.condition_5_1_holds
        assert report.bound_H_bar == math.inf

    def test_json_keys(self):
        report = check_conditions(CoefficientBounds(K_lip=0.0), 1.0)
        assert set(report.to_json_dict()) == {
            "l0", "l1", "c1", "l2", "c2", "cond_3_2", "cond_4_2", "cond_5_1",
            "rate", "l_bar", "g_bar", "h_bar"}
        assert "max feasible h" in report.to_text()
