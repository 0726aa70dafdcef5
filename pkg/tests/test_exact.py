import math

import numpy as np
import pytest

import oracles
from conftest import random_instance
from intentrisk.core import MetricSpec, Ranking, make_instance
from intentrisk.exact import (
    BudgetExceeded,
    check_guarantee,
    exact_vrisk_opt,
    guarantee_bound,
    maxkcover_instance,
    n_arrangements,
    risk_drop,
    submodularity_ratio,
)
from intentrisk.metrics import compute_targets, v_iw, vrisk


class TestExactOptimizer:
    def test_toy(self, toy):
        s = MetricSpec("avgrel")
        r, v = exact_vrisk_opt(toy, 2, 0.49, s)
        assert v == pytest.approx(0.5)
        assert r.doc_ids == ("d1", "d3")
        t = compute_targets(toy, s, 2)
        # every one-per-intent pair is optimal
        for pair in [("d1", "d3"), ("d1", "d4"), ("d2", "d3"), ("d2", "d4")]:
            assert vrisk(toy, Ranking(pair, 2), s, t, 0.49).vrisk == pytest.approx(0.5)

    def test_k_equals_n(self, fixed):
        r, v = exact_vrisk_opt(fixed, fixed.n_docs, 0.3, MetricSpec("avgrel"))
        assert set(r.doc_ids) == set(fixed.docs)

    def test_dominant_doc_k1(self):
        inst = make_instance("q", [0.3, 0.7], [[1, 1], [3, 2], [0, 2]], rel_max=3)
        r, v = exact_vrisk_opt(inst, 1, 0.2, MetricSpec("avgrel"))
        assert r.doc_ids == ("d2",) and v == 0.0

    @pytest.mark.parametrize(
        "name,want",
        [("avgrel", 0.466666666667), ("ndcg", 0.209461431764), ("err", 0.183984375), ("rbp", 0.076266666667), ("precatk", 0.133333333333)],
    )
    def test_frozen_optimum(self, fixed, name, want):
        # minima from enumerating all 120 ordered 3-selections with the reference loops
        _, v = exact_vrisk_opt(fixed, 3, 0.3, MetricSpec(name))
        assert v == pytest.approx(want, abs=1e-11)

    @pytest.mark.parametrize("name", ["avgrel", "ndcg", "err", "precatk"])
    def test_matches_brute_force(self, name):
        rng = np.random.default_rng(31)
        gain = "exponential" if name == "ndcg" else None
        for _ in range(25):
            inst = random_instance(rng, n_max=6, m_max=4, rel_max=3)
            k = int(rng.integers(1, 4))
            beta = float(rng.choice([0.1, 0.4, 1.0]))
            t = compute_targets(inst, MetricSpec(name), k)
            _, v = exact_vrisk_opt(inst, k, beta, MetricSpec(name), t)
            assert v == pytest.approx(oracles.best_vrisk(inst, k, beta, list(t), name, gain=gain), abs=1e-10)

    def test_tie_break_prefers_iw(self):
        # constant zero targets: every ranking has risk 0, so the best v_iw wins
        inst = make_instance("q", [0.5, 0.5], [[1, 0], [2, 2], [0, 1]], rel_max=2)
        s = MetricSpec("avgrel")
        r, v = exact_vrisk_opt(inst, 1, 0.5, s, np.zeros(2))
        assert v == 0.0 and r.doc_ids == ("d2",)

    def test_tie_break_lexicographic(self):
        inst = make_instance("q", [1.0], [[1], [1], [1]], docs=["z", "b", "m"], rel_max=1)
        r, _ = exact_vrisk_opt(inst, 2, 1.0, MetricSpec("ndcg"))
        assert r.doc_ids == ("b", "m")

    def test_budget(self):
        inst = make_instance("q", [1.0], [[1]] * 12, rel_max=1)
        assert n_arrangements(12, 6, modular=False) == math.comb(12, 6) * 720
        with pytest.raises(BudgetExceeded):
            exact_vrisk_opt(inst, 6, 0.5, MetricSpec("ndcg"), budget=10_000)
        exact_vrisk_opt(inst, 6, 0.5, MetricSpec("avgrel"), budget=10_000)


class TestMaxKCover:
    def test_pair_set_wins(self):
        c = maxkcover_instance({"a": 1, "b": 1}, [["a"], ["b"], ["a", "b"]], 1)
        r, v = exact_vrisk_opt(c.inst, 1, 1.0, c.spec, c.targets)
        assert r.doc_ids == ("S3",) and v == 0.0

    def test_full_family(self):
        c = maxkcover_instance({"a": 1, "b": 2, "c": 1}, [["a"], ["b"]], 2)
        r = Ranking(("S1", "S2"), 2)
        assert c.vrisk(r) == pytest.approx(0.5 * 0.25, abs=1e-12)

    def test_disjoint_singletons(self):
        n, k = 7, 3
        c = maxkcover_instance([1.0] * n, [[f"u{i + 1}"] for i in range(n)], k)
        r, v = exact_vrisk_opt(c.inst, k, 1.0, c.spec, c.targets)
        assert v == pytest.approx((1 - k / n) / k, abs=1e-12)

    def test_closed_form_round_trip(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            u = int(rng.integers(1, 8))
            w = rng.integers(0, 5, size=u).astype(float)
            w[0] += 1
            fam = [[f"u{j + 1}" for j in range(u) if rng.random() < 0.4] for _ in range(int(rng.integers(1, 7)))]
            k = int(rng.integers(1, 4))
            c = maxkcover_instance(list(w), fam, k)
            pick = rng.permutation(len(fam))[: min(k, len(fam))]
            r = Ranking(tuple(f"S{j + 1}" for j in pick), k)
            assert abs(c.vrisk(r) - c.closed_form(r)) <= 1e-12

    def test_errors(self):
        with pytest.raises(ValueError, match="positive"):
            maxkcover_instance([0.0, 0.0], [["u1"]], 1)
        with pytest.raises(ValueError, match="empty"):
            maxkcover_instance([1.0], [], 1)


class TestGuarantees:
    def test_modular_bound(self):
        assert guarantee_bound(MetricSpec("avgrel"), 4)[0] == pytest.approx(1 - 1 / math.e)
        assert guarantee_bound(MetricSpec("precatk"), 4)[0] == pytest.approx(0.6321, abs=1e-4)

    def test_ndcg_ratio(self):
        # w_k over the sum of w_1..w_k
        w = [1 / math.log2(1 + i) for i in range(1, 6)]
        assert submodularity_ratio(5) == pytest.approx(w[-1] / sum(w))
        assert submodularity_ratio(5) == pytest.approx(0.1312, abs=1e-4)
        bound, gamma = guarantee_bound(MetricSpec("ndcg"), 5)
        assert bound == pytest.approx(1 - math.exp(-gamma))

    def test_quoted_ratios_use_shorter_sum(self):
        # the quoted 0.15 at k = 5 matches w_k over w_1..w_{k-1}, not w_1..w_k
        w = [1 / math.log2(1 + i) for i in range(1, 6)]
        assert w[-1] / sum(w[:-1]) == pytest.approx(0.15, abs=0.005)
        assert submodularity_ratio(5) < 0.15

    def test_no_bound_for_other_metrics(self):
        with pytest.raises(ValueError):
            guarantee_bound(MetricSpec("err"), 3)

    def test_zero_targets(self, fixed):
        g = check_guarantee(fixed, 3, 0.3, MetricSpec("avgrel"), np.zeros(3))
        assert g.delta_opt == 0 and g.delta_greedy == 0 and g.satisfied

    @pytest.mark.parametrize("name", ["avgrel", "precatk", "ndcg"])
    def test_random_instances(self, name):
        rng = np.random.default_rng(41)
        for _ in range(40):
            inst = random_instance(rng, n_max=8, m_max=5)
            k = int(rng.integers(1, 4))
            g = check_guarantee(inst, k, float(rng.choice([0.05, 0.25, 1.0])), MetricSpec(name))
            # greedy can fall below the bound (see the counterexample below);
            # what always holds is 0 <= greedy drop <= optimal drop
            assert g.delta_opt >= g.delta_greedy - 1e-12 >= -1e-12
            assert 0 < g.bound < 1

    def test_risk_drop_is_not_submodular(self):
        # two equally likely intents, one doc each, beta = 1/2: the first doc
        # alone moves nothing in the tail, the second completes the drop
        inst = make_instance("q", [0.5, 0.5], [[1, 0], [0, 1]], docs=["a", "b"], rel_max=1)
        s = MetricSpec("avgrel")
        t = compute_targets(inst, s, 2)
        gain_empty = risk_drop(inst, ["a"], 2, 0.5, s, t) - risk_drop(inst, [], 2, 0.5, s, t)
        gain_after_b = risk_drop(inst, ["b", "a"], 2, 0.5, s, t) - risk_drop(inst, ["b"], 2, 0.5, s, t)
        assert gain_empty == pytest.approx(0.0)
        assert gain_after_b == pytest.approx(0.5)
        # greedy still lands on the optimum here
        g = check_guarantee(inst, 2, 0.5, s, t)
        assert g.delta_greedy == pytest.approx(g.delta_opt)

    def test_greedy_can_miss_the_bound(self):
        # first pick: d3 covers the rare intent and ties the whole tail at 1/2;
        # every second pick then leaves VRisk at 1/2, while {d1, d2} reaches 0.04
        inst = make_instance("cx", [0.01, 0.30, 0.69], [[0, 0, 1], [0, 1, 0], [1, 0, 0], [1, 0, 0]], rel_max=1)
        g = check_guarantee(inst, 2, 0.25, MetricSpec("avgrel"))
        assert g.greedy.doc_ids[0] == "d3"
        assert g.delta_greedy == pytest.approx(0.02)
        assert g.delta_opt == pytest.approx(0.48)
        assert set(g.optimal.doc_ids) == {"d1", "d2"}
        assert not g.satisfied
        tgt = oracles.targets(inst, 2, "avgrel")
        assert oracles.best_vrisk(inst, 2, 0.25, tgt, "avgrel") == pytest.approx(0.04)
