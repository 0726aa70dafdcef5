import numpy as np
import pytest
from hypothesis import given, settings

from intentrisk.core import (
    InstanceError,
    IntentDistribution,
    MetricSpec,
    QueryInstance,
    Ranking,
    RelevanceTable,
    make_instance,
    raw_relevance,
    validate_instance,
)

from conftest import instances


def _inst(probs, rel, rel_max=1.0, rel_min=0.0, docs=None, intents=None):
    intents = intents or [f"c{i}" for i in range(len(probs))]
    rel = np.asarray(rel, dtype=float)
    docs = docs or [f"d{i}" for i in range(rel.shape[0])]
    return QueryInstance("q", IntentDistribution(intents, probs), RelevanceTable(docs, rel, rel_max, rel_min))


class TestValidate:
    def test_toy_is_valid(self, toy):
        assert validate_instance(toy) is toy
        assert toy.n_intents == 2 and toy.n_docs == 4

    def test_probs_must_sum_to_one(self):
        with pytest.raises(InstanceError, match="probabilities sum to 1.2"):
            validate_instance(_inst([0.6, 0.6], [[1, 0]]))

    def test_relevance_below_min(self):
        with pytest.raises(InstanceError, match="relevance below rel_min"):
            validate_instance(_inst([0.5, 0.5], [[-0.1, 0]]))

    def test_relevance_above_max(self):
        with pytest.raises(InstanceError, match="relevance above rel_max"):
            validate_instance(_inst([0.5, 0.5], [[2, 0]]))

    def test_shape_mismatch(self):
        with pytest.raises(InstanceError, match="shape"):
            validate_instance(_inst([0.5, 0.5], [[1, 0, 1]]))

    def test_negative_prob(self):
        with pytest.raises(InstanceError, match="negative probability"):
            validate_instance(_inst([1.5, -0.5], [[1, 0]]))

    def test_duplicate_ids(self):
        with pytest.raises(InstanceError, match="duplicate intent"):
            validate_instance(_inst([0.5, 0.5], [[1, 0]], intents=["a", "a"]))
        with pytest.raises(InstanceError, match="duplicate doc"):
            validate_instance(_inst([1.0], [[1], [0]], docs=["x", "x"]))

    def test_negative_rel_min_rejected(self):
        with pytest.raises(InstanceError, match="rel_min"):
            validate_instance(_inst([1.0], [[0]], rel_min=-1.0))

    def test_empty_docs(self):
        with pytest.raises(InstanceError, match="no documents"):
            validate_instance(_inst([1.0], np.zeros((0, 1))))

    def test_tiny_drift_is_renormalized(self):
        inst = _inst([0.5, 0.5 + 5e-10], [[1, 0]])
        out = validate_instance(inst)
        assert out is not inst
        assert out.probs.sum() == pytest.approx(1.0, abs=1e-15)

    def test_drift_beyond_tolerance_fails(self):
        with pytest.raises(InstanceError):
            validate_instance(_inst([0.5, 0.5 + 1e-8], [[1, 0]]))

    @given(instances())
    @settings(max_examples=50, deadline=None)
    def test_idempotent(self, inst):
        once = validate_instance(inst)
        assert validate_instance(once) is once


class TestRawRelevance:
    def test_toy_d1(self, toy):
        assert raw_relevance(toy, "d1") == pytest.approx(0.51)

    def test_single_intent(self):
        inst = make_instance("q", [1.0], [[3], [1]], rel_max=4)
        assert raw_relevance(inst, "d1") == 3.0

    def test_constant_grades(self):
        inst = make_instance("q", [0.2, 0.3, 0.5], [[2, 2, 2]], rel_max=4)
        assert raw_relevance(inst, "d1") == pytest.approx(2.0)

    def test_unknown_doc(self, toy):
        with pytest.raises(InstanceError, match="unknown doc"):
            raw_relevance(toy, "nope")

    @given(instances())
    @settings(max_examples=60, deadline=None)
    def test_bounded_by_grade_range(self, inst):
        r = inst.raw_relevances
        assert np.all(r >= inst.rel_min - 1e-12) and np.all(r <= inst.rel_max + 1e-12)

    @given(instances(m_max=5))
    @settings(max_examples=60, deadline=None)
    def test_intent_permutation_invariance(self, inst):
        perm = np.random.default_rng(inst.n_docs).permutation(inst.n_intents)
        shuffled = make_instance(
            "q",
            {inst.intents[j]: float(inst.probs[j]) for j in perm},
            inst.rel[:, perm],
            docs=list(inst.docs),
            rel_max=inst.rel_max,
        )
        for d in inst.docs:
            assert raw_relevance(shuffled, d) == pytest.approx(raw_relevance(inst, d), abs=1e-12)


class TestRanking:
    def test_rejects_duplicates(self):
        with pytest.raises(ValueError, match="duplicate"):
            Ranking(("a", "a"), 3)

    def test_rejects_overlong(self):
        with pytest.raises(ValueError, match="cutoff"):
            Ranking(("a", "b"), 1)

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            Ranking((), 0)

    def test_unknown_doc_in_instance(self, toy):
        with pytest.raises(InstanceError):
            toy.indices(["d9"])


class TestMetricSpec:
    def test_aliases(self):
        assert MetricSpec("nDCG").metric_id == "ndcg"
        assert MetricSpec("P@k").metric_id == "precatk"

    def test_gain_defaults(self):
        assert MetricSpec("ndcg").gain_scheme == "exponential"
        assert MetricSpec("err").gain_scheme == "exponential"
        assert MetricSpec("avgrel").gain_scheme == "linear"

    def test_bad_persistence(self):
        with pytest.raises(ValueError):
            MetricSpec("rbp", rbp_persistence=1.0)

    def test_threshold_range(self):
        assert MetricSpec("precatk").threshold(0, 4) == 2.0
        with pytest.raises(ValueError):
            MetricSpec("precatk", binarize_threshold=5).threshold(0, 4)

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown metric"):
            MetricSpec("map")
