from __future__ import annotations

import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs
from hypothesis.extra.numpy import arrays
from scipy.special import comb

from icexperts.errors import CombinatorialBlowupError, DomainError, StepSizeError
from icexperts.sim import ic_audit
from icexperts.utilities import quadratic_loss
from icexperts.wsu import (
    WSU, MetaIndex, MetaWSU, adaptive_regret_bound, adaptive_step_size, default_wsu_eta,
    meta_default_eta, meta_wsu_run, sample_index, wsu_update, wswm_payment,
)


def random_simplex(rng, K):
    w = rng.random(K) + 0.05
    return w / w.sum()


class TestPayments:
    def test_hand_example(self):
        np.testing.assert_allclose(wswm_payment([0.8, 0.2], [0.5, 0.5], 1), [0.65, 0.35], atol=1e-15)

    def test_identical_reports_return_wagers(self, rng):
        w = rng.random(5)
        np.testing.assert_allclose(wswm_payment(np.full(5, 0.3), w, 0), w, rtol=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(hs.integers(1, 12).flatmap(lambda k: hs.tuples(
        arrays(np.float64, k, elements=hs.floats(0, 1)),
        arrays(np.float64, k, elements=hs.floats(0, 10)),
        hs.integers(0, 1))))
    def test_budget_balance(self, args):
        p, w, r = args
        pay = wswm_payment(p, w, r)
        assert np.all(pay >= 0)
        assert abs(pay.sum() - w.sum()) <= 1e-12 * max(1.0, w.sum())

    def test_domain(self):
        with pytest.raises(DomainError):
            wswm_payment([1.2, 0.5], [0.5, 0.5], 1)
        with pytest.raises(DomainError):
            wswm_payment([0.2, 0.5], [-0.5, 0.5], 1)


class TestUpdate:
    def test_hand_example(self):
        np.testing.assert_allclose(wsu_update([0.5, 0.5], [0.0, 1.0], 0.1), [0.525, 0.475], atol=1e-15)

    def test_constant_losses(self):
        np.testing.assert_array_equal(wsu_update([0.5, 0.5], [0.3, 0.3], 0.4), [0.5, 0.5])

    def test_matches_payment_form(self, rng):
        for _ in range(50):
            K = int(rng.integers(2, 8))
            pi, p, r, eta = random_simplex(rng, K), rng.random(K), int(rng.integers(2)), 0.3
            expected = eta * wswm_payment(p, pi, r) + (1 - eta) * pi
            np.testing.assert_allclose(wsu_update(pi, quadratic_loss(p, r), eta), expected, atol=1e-15)

    def test_shift_invariance(self, rng):
        pi, loss = random_simplex(rng, 6), rng.random(6) * 0.5
        np.testing.assert_allclose(wsu_update(pi, loss, 0.3), wsu_update(pi, loss + 0.5, 0.3), atol=1e-15)

    def test_step_size_guard(self):
        with pytest.raises(StepSizeError):
            wsu_update([0.5, 0.5], [0.0, 1.0], 2.0)
        with pytest.raises(StepSizeError):
            WSU.uniform(3, 1.0)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (200, 5), elements=hs.floats(0, 1)), hs.floats(0.01, 0.5))
    def test_simplex_preserved(self, losses, eta):
        w = np.full(5, 0.2)
        for row in losses:
            w = wsu_update(w, row, eta)
            assert abs(w.sum() - 1.0) <= 1e-12
            assert np.all(w > 0)

    def test_long_run_stays_on_simplex(self, rng):
        algo = WSU.uniform(10, 0.5)
        for _ in range(20_000):
            algo.update(rng.random(10))
        assert abs(algo.weights.sum() - 1.0) <= 1e-12


class TestSampling:
    def test_point_mass(self, rng):
        assert all(sample_index([0.0, 1.0, 0.0], rng) == 1 for _ in range(100))

    @pytest.mark.parametrize("w", [[0.25] * 4, [0.7, 0.3]])
    def test_frequencies(self, w):
        rng = np.random.default_rng(0)
        draws = [sample_index(w, rng) for _ in range(100_000)]
        np.testing.assert_allclose(np.bincount(draws, minlength=len(w)) / 1e5, w, atol=0.01)

    def test_deterministic(self):
        a = [WSU.uniform(5, 0.1).select(np.random.default_rng(3)) for _ in range(2)]
        assert a[0] == a[1]


class TestStepSizes:
    def test_defaults(self):
        assert default_wsu_eta(10, 1) == 0.5
        assert default_wsu_eta(10, 10_000) == pytest.approx(math.sqrt(math.log(10) / 10_000))
        assert meta_default_eta(20, 5, 284) == pytest.approx(0.2050, abs=1e-4)

    def test_meta_warns_on_short_horizon(self):
        with pytest.warns(RuntimeWarning):
            meta_default_eta(20, 5, 10)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            meta_default_eta(20, 5, 1000)

    def test_adaptive(self):
        assert adaptive_regret_bound(0.0, 10) == pytest.approx(math.log(10))
        T = 1000
        assert adaptive_regret_bound(T, 10) == pytest.approx(math.sqrt(T * math.log(10)) + math.log(10))
        assert adaptive_step_size(0.0, 10) == 0.5
        assert adaptive_step_size(1e6, 10) == pytest.approx(math.sqrt(math.log(10) / 1e6))
        with pytest.raises(ValueError):
            adaptive_regret_bound(-1.0, 3)

    def test_instance_split_bound(self):
        T, m, K = 900, 3, 10
        total = m * adaptive_regret_bound(T / m, K)
        assert total <= math.sqrt(m * T * math.log(K)) + m * math.log(K) + 1e-9


class TestMetaIndex:
    @pytest.mark.parametrize("K", [1, 5, 9, 12])
    def test_bijection(self, K):
        for m in range(1, K + 1):
            idx = MetaIndex(K, m)
            rows = idx.all_subsets()
            assert len(rows) == comb(K, m, exact=True)
            for k, S in enumerate(rows):
                assert idx.unrank(k) == tuple(S)
                assert idx.rank(S) == k
            assert {tuple(r) for r in rows} == set(itertools.combinations(range(K), m))

    def test_bad_index(self):
        with pytest.raises(IndexError):
            MetaIndex(4, 2).unrank(6)


class TestMetaWSU:
    def test_two_experts_match_plain_wsu(self, rng):
        L = rng.random((50, 2))
        sets, w = meta_wsu_run(L, 1, eta=0.2, rng=7)
        plain = WSU.uniform(2, 0.2)
        r = np.random.default_rng(7)
        for t, row in enumerate(L):
            assert sets[t] == plain.select(r)
            plain.update(row)
        np.testing.assert_array_equal(w, plain.weights)

    def test_constant_losses_keep_uniform(self):
        _, w = meta_wsu_run(np.full((30, 5), 0.4), 2, eta=0.3, rng=0)
        np.testing.assert_allclose(w, 0.1, atol=1e-15)

    def test_cap(self):
        with pytest.raises(CombinatorialBlowupError):
            MetaWSU(40, 10, 0.1)

    def test_inclusion_probabilities_sum_to_m(self, rng):
        algo = MetaWSU(6, 3, 0.2)
        for _ in range(10):
            algo.update(rng.random(6))
        assert algo.inclusion_probabilities().sum() == pytest.approx(3.0, abs=1e-12)


def _expected_next_weight_oracle(pi, eta, i, p, reports, b):
    # written out directly from pi_i (1 - eta (l_i - sum_j pi_j l_j))
    total = 0.0
    for r, pr in ((0, 1 - b), (1, b)):
        rep = np.array(reports, dtype=float)
        rep[i] = p
        loss = (rep - r) ** 2
        total += pr * pi[i] * (1 - eta * (loss[i] - sum(pi[j] * loss[j] for j in range(len(pi)))))
    return total


class TestIncentives:
    def test_wsu_audit_curve_matches_oracle(self, rng):
        algo = WSU.uniform(4, 0.3)
        for _ in range(5):
            algo.update(rng.random(4))
        reports, b = rng.random(4), 0.42
        for p in (0.0, 0.3, 0.42, 0.9):
            rep = reports.copy()
            rep[1] = p
            assert algo.expected_next_weight(1, rep, b) == pytest.approx(
                _expected_next_weight_oracle(algo.weights, 0.3, 1, p, reports, b), abs=1e-15)

    def test_wsu_truthful_is_optimal(self, rng):
        for _ in range(20):
            K = int(rng.integers(2, 8))
            algo = WSU.uniform(K, 0.4)
            for _ in range(int(rng.integers(0, 30))):
                algo.update(rng.random(K))
            i, b = int(rng.integers(K)), float(rng.random())
            res = ic_audit(algo, i, b, rng.random(K))
            assert res.deviation <= 1e-3
            assert res.gap <= 1e-15

    def test_degenerate_beliefs(self, rng):
        algo = WSU.uniform(3, 0.3)
        for b in (0.0, 1.0):
            assert ic_audit(algo, 0, b, rng.random(3)).argmax_report == b

    def test_meta_wsu_truthful_is_optimal(self, rng):
        algo = MetaWSU(5, 2, 0.3)
        for _ in range(10):
            algo.update(rng.random(5))
        for _ in range(5):
            b = float(rng.random())
            assert ic_audit(algo, 2, b, rng.random(5), step=1e-2).deviation <= 1e-2
