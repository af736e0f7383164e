from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
import scipy.stats as st
from scipy.integrate import quad

from icexperts.errors import ConfigError, DomainError, HorizonTooShortError
from icexperts.ftpl import (
    FTPL, ConditionalRoundContext, best_response_conditional, default_step_size,
    deviation_factor_A, ic_deviation_bound, top_m,
)
from icexperts.noise import GAUSSIAN, HYPERBOLIC, LAPLACE
from icexperts.sim import ic_audit


class TestSelect:
    def test_forced_scores(self):
        algo = FTPL(4, 2, 2.0, LAPLACE)
        gamma = np.array([3.1, 0.5, 2.2, 0.9]) / 2.0
        assert algo.select(None, gamma=gamma) == (1, 3)

    def test_follow_the_leader_limit(self):
        algo = FTPL(3, 1, 2.0, LAPLACE, cumulative_losses=[5.0, 1.0, 3.0])
        assert algo.select(None, gamma=np.zeros(3)) == (1,)

    def test_ties_go_to_lower_index(self):
        assert top_m([1.0, 0.0, 0.0, 0.0], 2) == (1, 2)

    def test_brute_force_equivalence(self, rng):
        for _ in range(300):
            K, m = int(rng.integers(2, 11)), int(rng.integers(1, 5))
            m = min(m, K)
            algo = FTPL(K, m, 5.0, LAPLACE, cumulative_losses=rng.random(K) * 20)
            gamma = LAPLACE.sample(rng, K)
            scores = algo.scores(gamma)
            best = min(itertools.combinations(range(K), m), key=lambda S: sum(scores[list(S)]))
            assert algo.select(None, gamma=gamma) == best

    def test_fresh_noise_each_round(self):
        algo = FTPL(20, 3, 2.0, LAPLACE)
        r = np.random.default_rng(0)
        picks = {algo.select(r) for _ in range(20)}
        assert len(picks) > 1

    def test_eta_must_exceed_bound(self):
        with pytest.raises(ConfigError):
            FTPL(3, 1, 1.0, LAPLACE)
        FTPL(3, 1, 0.5, GAUSSIAN)


class TestUpdate:
    def test_accumulates(self):
        algo = FTPL(2, 1, 2.0, LAPLACE)
        algo.update([0.0, 0.0])
        np.testing.assert_array_equal(algo.cumulative_losses, [0.0, 0.0])
        algo.update([0.3, 0.7])
        np.testing.assert_allclose(algo.cumulative_losses, [0.3, 0.7])

    def test_all_ones(self):
        algo = FTPL(3, 1, 2.0, LAPLACE)
        for _ in range(25):
            algo.update(np.ones(3))
        np.testing.assert_array_equal(algo.cumulative_losses, 25.0)

    def test_domain(self):
        with pytest.raises(DomainError):
            FTPL(2, 1, 2.0, LAPLACE).update([0.5, 1.5])


class TestStepSize:
    def test_values(self):
        assert default_step_size(1, 284, 20, 5) == pytest.approx(14.313, abs=1e-3)
        assert default_step_size(4, 500, 20, 5) == pytest.approx(2 * default_step_size(1, 500, 20, 5))

    def test_boundary(self):
        with pytest.raises(HorizonTooShortError):
            default_step_size(1, math.log(4), 20, 5)
        with pytest.raises(ConfigError):
            default_step_size(1, 100, 5, 5)

    def test_deviation_bound(self):
        assert ic_deviation_bound(1, 10) == pytest.approx(0.25)
        assert ic_deviation_bound(1, 4) == pytest.approx(1.0)
        assert ic_deviation_bound(1, 1e12) < 1e-11
        with pytest.raises(ConfigError):
            ic_deviation_bound(1, 2)


class TestDeviationFactor:
    def test_equal_arguments(self):
        ctx = ConditionalRoundContext(3.0, 2.0, 2.0)
        assert deviation_factor_A(ctx, 0.5, LAPLACE, 10.0) == pytest.approx(1.0)

    @pytest.mark.parametrize("noise", [LAPLACE, HYPERBOLIC], ids=lambda n: n.name)
    def test_interval(self, rng, noise):
        for _ in range(2000):
            X0 = rng.uniform(-20, 20)
            ctx = ConditionalRoundContext(rng.uniform(-20, 20), X0, X0 + rng.uniform(-1, 1))
            A = deviation_factor_A(ctx, rng.random(), noise, 10.0)
            assert math.exp(-0.2) - 1e-12 <= A <= math.exp(0.2) + 1e-12

    def test_gaussian_escapes(self):
        logs = [abs(math.log(deviation_factor_A(ConditionalRoundContext(0.0, -g, -g + 1.0), 0.5, GAUSSIAN, 10.0)))
                for g in (5.0, 50.0, 500.0)]
        assert logs[0] < logs[1] < logs[2]
        assert logs[2] > 0.2 + math.log(10)

    def test_gaussian_breaks_bound_far_from_threshold(self):
        b = (np.arange(1, 100) / 100)[:, None, None]
        ctx = ConditionalRoundContext(np.linspace(-100, 100, 9)[None, :, None], 0.0,
                                      np.arange(-1, 1.01, 0.25)[None, None, :])
        gauss = np.abs(best_response_conditional(ctx, b, GAUSSIAN, 10.0) - b).max()
        lap = np.abs(best_response_conditional(ctx, b, LAPLACE, 10.0) - b).max()
        assert gauss > 0.25 >= lap


class TestBestResponse:
    def test_unit_factor(self):
        ctx = ConditionalRoundContext(0.0, 0.0, 0.0)
        for b in (0.1, 0.5, 0.77):
            assert best_response_conditional(ctx, b, LAPLACE, 10.0, log_A=0.0) == pytest.approx(b, abs=1e-9)

    def test_constant_factor(self):
        ctx = ConditionalRoundContext(0.0, 0.0, 0.0)
        expected = 0.5 / (0.5 + 0.5 * math.exp(0.1))
        assert expected == pytest.approx(0.4750, abs=1e-4)
        assert best_response_conditional(ctx, 0.5, LAPLACE, 10.0, log_A=0.1) == pytest.approx(expected, abs=1e-9)

    def test_fixed_point(self, rng):
        for _ in range(50):
            ctx = ConditionalRoundContext(rng.uniform(-5, 5), 0.0, rng.uniform(-1, 1))
            b = rng.uniform(0.01, 0.99)
            p = best_response_conditional(ctx, b, HYPERBOLIC, 10.0)
            A = deviation_factor_A(ctx, p, HYPERBOLIC, 10.0)
            assert p == pytest.approx(b / (b + (1 - b) * A), abs=1e-9)

    def test_boundary_beliefs(self):
        ctx = ConditionalRoundContext(1.0, 0.0, 0.5)
        assert best_response_conditional(ctx, 0.0, LAPLACE, 10.0) == 0.0
        assert best_response_conditional(ctx, 1.0, LAPLACE, 10.0) == 1.0

    def test_laplace_bound(self):
        b = np.arange(0.05, 0.951, 0.05)[:, None, None]
        L = np.arange(-5, 5.01, 0.5)[None, :, None]
        d = np.arange(-1, 1.01, 0.25)[None, None, :]
        p = best_response_conditional(ConditionalRoundContext(L, 0.0, d), b, LAPLACE, 10.0)
        assert np.max(np.abs(p - b)) <= 0.25 + 1e-9

    @pytest.mark.parametrize("noise", [LAPLACE, HYPERBOLIC], ids=lambda n: n.name)
    def test_gap_function_increasing(self, noise, rng):
        grid = np.arange(0, 1.0001, 1e-3)
        for _ in range(20):
            X0 = rng.uniform(-5, 5)
            ctx = ConditionalRoundContext(0.0, X0, X0 + rng.uniform(-1, 1))
            b = rng.uniform(0.01, 0.99)
            A = deviation_factor_A(ctx, grid, noise, 2.0)
            h = grid - b / (b + (1 - b) * A)
            assert np.all(np.diff(h) > 0)

    def test_no_sign_change(self):
        with pytest.raises(ArithmeticError):
            best_response_conditional(ConditionalRoundContext(0.0, 0.0, 0.0), 0.5, LAPLACE, 10.0,
                                      log_A=-np.inf)

    def test_eta_must_exceed_bound(self):
        with pytest.raises(ConfigError):
            best_response_conditional(ConditionalRoundContext(0.0, 0.0, 0.0), 0.5, LAPLACE, 1.0)

    def test_belief_domain(self):
        with pytest.raises(DomainError):
            best_response_conditional(ConditionalRoundContext(0.0, 0.0, 0.0), 1.5, LAPLACE, 10.0)


class TestSelectionProbability:
    def test_dominant_expert(self):
        algo = FTPL(4, 1, 2.0, LAPLACE, cumulative_losses=[0.0, 100.0, 100.0, 100.0])
        p, _ = algo.selection_probability_mc(0, 0.5, 1, np.full(4, 0.5), samples=20_000, rng=0)
        assert p == 1.0

    def test_identical_experts(self):
        algo = FTPL(5, 2, 2.0, LAPLACE)
        p, se = algo.selection_probability_mc(3, 0.5, 0, np.full(5, 0.5), samples=100_000, rng=1)
        assert abs(p - 0.4) <= 3 * se

    def test_quadrature_oracle(self):
        eta = 2.0
        algo = FTPL(3, 1, eta, LAPLACE, cumulative_losses=[0.0, 0.5, 1.0])
        p, se = algo.selection_probability_mc(0, 0.5, 0, np.full(3, 0.5), samples=1_000_000, rng=2)
        a = np.array([0.25, 0.75, 1.25])
        lap = st.laplace()

        # condition on expert 0's perturbation g; each rival must land above it
        def integrand(g):
            return lap.pdf(g) * lap.sf(g - (a[1] - a[0]) / eta) * lap.sf(g - (a[2] - a[0]) / eta)

        kinks = [0.0, (a[1] - a[0]) / eta, (a[2] - a[0]) / eta]
        exact, _ = quad(integrand, -40, 40, points=kinks, epsabs=1e-12, limit=200)
        assert abs(p - exact) <= 3 * se

    def test_probabilities_sum_to_m(self, rng):
        K, m = 6, 2
        algo = FTPL(K, m, 3.0, LAPLACE, cumulative_losses=rng.random(K) * 3)
        reports = rng.random(K)
        est = [algo.selection_probability_mc(i, reports[i], 1, reports, samples=50_000, rng=10 + i)
               for i in range(K)]
        total = sum(p for p, _ in est)
        pooled = math.sqrt(sum(se ** 2 for _, se in est))
        assert abs(total - m) <= 3 * pooled

    def test_mirror_symmetry(self):
        # P(d) + P(-d) = 1 for two experts separated by a loss gap d
        est = []
        for d in (0.7, -0.7):
            algo = FTPL(2, 1, 2.0, LAPLACE, cumulative_losses=[0.0, d])
            est.append(algo.selection_probability_mc(0, 0.5, 0, [0.5, 0.5], samples=200_000, rng=5))
        assert abs(est[0][0] + est[1][0] - 1.0) <= 3 * math.hypot(est[0][1], est[1][1])

    def test_curve_agrees_with_pointwise(self):
        algo = FTPL(5, 2, 3.0, LAPLACE, cumulative_losses=[1.0, 0.2, 0.5, 0.9, 0.4])
        reports = np.array([0.3, 0.6, 0.5, 0.2, 0.8])
        curve = algo.expected_selection_curve(0, 0.3, reports, [0.1, 0.3, 0.9], samples=200_000, rng=6)
        for p, c in zip([0.1, 0.3, 0.9], curve):
            p0, s0 = algo.selection_probability_mc(0, p, 0, reports, samples=200_000, rng=7)
            p1, s1 = algo.selection_probability_mc(0, p, 1, reports, samples=200_000, rng=8)
            assert abs(c - (0.7 * p0 + 0.3 * p1)) <= 4 * math.hypot(s0, s1) + 4 * 0.0012

    def test_audit_within_bound(self, rng):
        algo = FTPL(6, 2, 10.0, LAPLACE)
        for _ in range(30):
            algo.update(rng.random(6))
        for b in (0.2, 0.5, 0.8):
            res = ic_audit(algo, 0, b, rng.random(6), step=1e-2, samples=100_000, rng=rng)
            assert res.deviation <= 0.25 + 0.05
