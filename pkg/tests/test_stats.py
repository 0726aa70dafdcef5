import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from intentrisk.stats import apply_holm, holm, paired_test, permutation_test, wilcoxon_signed_rank
from oracles import wilcoxon_exact


class TestWilcoxon:
    @pytest.mark.parametrize("seed", range(8))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        d = rng.integers(-4, 5, size=rng.integers(2, 13)).astype(float)
        if np.count_nonzero(d) < 2:
            d[:2] = [1.0, -2.0]
        assert wilcoxon_signed_rank(d) == pytest.approx(wilcoxon_exact(d), abs=1e-12)

    def test_matches_scipy_exact(self):
        d = np.array([0.3, -1.2, 2.5, 0.7, 1.9, -0.4, 3.1, 0.2, 1.1, -0.9])
        ref = scipy.stats.wilcoxon(d, method="exact").pvalue
        assert wilcoxon_signed_rank(d) == pytest.approx(ref, rel=1e-10)

    def test_normal_regime_matches_scipy(self):
        rng = np.random.default_rng(4)
        d = np.round(rng.normal(0.3, 1.0, 60), 1)
        ref = scipy.stats.wilcoxon(d, zero_method="wilcox", correction=False, method="approx").pvalue
        assert wilcoxon_signed_rank(d) == pytest.approx(ref, rel=1e-8)

    def test_symmetric_mixed_signs(self):
        assert wilcoxon_signed_rank([1, -1, 2, -2, 3, -3]) == pytest.approx(1.0)

    def test_degenerate(self):
        assert wilcoxon_signed_rank([0, 0, 0]) is None
        assert wilcoxon_signed_rank([0, 1.5]) is None

    def test_all_positive_small(self):
        # 2 of 2^5 sign patterns are at least as extreme
        assert wilcoxon_signed_rank([1, 2, 3, 4, 5]) == pytest.approx(2 / 32)


class TestPermutation:
    def test_identical_methods(self):
        assert permutation_test(np.zeros(30), B=100) == 1.0

    def test_strong_effect(self):
        assert permutation_test(np.ones(30), B=100_000, seed=1) < 1e-4

    def test_seeded(self):
        d = np.random.default_rng(0).normal(0.2, 1, 25)
        assert permutation_test(d, 5000, 3) == permutation_test(d, 5000, 3)

    def test_chunking_invisible(self):
        d = np.random.default_rng(2).normal(0.1, 1, 15)
        assert permutation_test(d, 4000, 5, chunk=4000) == permutation_test(d, 4000, 5, chunk=4000)
        assert abs(permutation_test(d, 4000, 5, chunk=333) - permutation_test(d, 4000, 5)) < 0.05

    def test_bad_B(self):
        with pytest.raises(ValueError):
            permutation_test([1.0], B=0)

    @given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=20))
    @settings(max_examples=30, deadline=None)
    def test_negation_invariant(self, d):
        d = np.array(d)
        assert permutation_test(-d, 4000, 11) == permutation_test(d, 4000, 11)

    def test_agrees_with_exact_sign_flip(self):
        d = np.array([0.5, 1.2, -0.3, 0.8, 0.9, -0.1, 0.4, 1.5])
        signs = np.array(list(np.ndindex(*(2,) * d.size))) * 2 - 1
        exact = np.mean(np.abs(signs @ d) / d.size >= abs(d.mean()) - 1e-12)
        B = 40_000
        p = permutation_test(d, B, 0)
        se = np.sqrt(exact * (1 - exact) / B)
        assert abs(p - exact) <= 3 * se + 1 / B


class TestHolm:
    def test_worked_example(self):
        reject, adj = holm([0.01, 0.04, 0.03, 0.005], 0.05)
        assert reject == [True, False, False, True]
        assert adj == pytest.approx([0.03, 0.06, 0.06, 0.02])

    def test_missing_values(self):
        reject, adj = holm([None, 0.01, 0.2], 0.05)
        assert reject == [False, True, False]
        assert adj[0] is None and adj[1] == pytest.approx(0.02) and adj[2] == pytest.approx(0.2)

    def test_step_down_stops(self):
        # 0.026 fails alpha/2, which stops the procedure before the last alpha/1 check
        reject, _ = holm([0.001, 0.026, 0.026], 0.05)
        assert reject == [True, False, False]

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=15))
    @settings(max_examples=80)
    def test_adjusted_dominates(self, ps):
        reject, adj = holm(ps)
        for p, a, r in zip(ps, adj, reject):
            assert p <= a <= 1
            assert r == (a <= 0.05) or not r


class TestPaired:
    def test_fields(self):
        r = paired_test("a", "b", "vrisk", "default", [0.1, 0.0, 0.3, 0.2], B=1000)
        assert r.n == 4 and r.n_nonzero == 3
        assert r.mean_diff == pytest.approx(0.15)
        assert r.wilcoxon_defined

    def test_apply_holm_marks(self):
        rs = [paired_test("a", "b", "vrisk", "g", np.ones(30), B=20000),
              paired_test("a", "c", "vrisk", "g", [1, -1, 2, -2, 3, -3], B=2000)]
        out = apply_holm(rs)
        assert out[0].permutation_significant and out[0].wilcoxon_significant
        assert not out[1].permutation_significant
        assert out[1].wilcoxon_p_holm == pytest.approx(1.0)
