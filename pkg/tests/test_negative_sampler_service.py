# tests/test_negative_sampler_service.py
import pytest

from src.models.corpus_models import Qrels
from src.models.training_models import NUM_FEATURES
from src.services.negative_sampler_service import NegativeSamplerService
from tests.conftest import make_list


def _run(query_id="q1", n=10):
    return make_list(query_id, [(f"{query_id}p{i}", 1.0 - i / 100) for i in range(1, n + 1)])


def test_positive_is_first_relevant_and_negatives_are_disjoint():
    qrels = Qrels(judgments={"q1": {"q1p3": 2, "q1p7": 3, "q1p5": 1}})
    examples, skipped = NegativeSamplerService(n_neg=4, seed=1).run({"q1": _run()}, qrels)
    assert skipped == 0
    (example,) = examples
    assert example.positive_id == "q1p3"
    assert len(example.negative_ids) == 4
    assert len(set(example.negative_ids)) == 4
    assert "q1p3" not in example.negative_ids
    assert "q1p7" not in example.negative_ids  # relevant candidates are never negatives
    assert example.features is None


def test_short_pool_yields_fewer_negatives():
    qrels = Qrels(judgments={"q1": {"q1p1": 2}})
    examples, _ = NegativeSamplerService(n_neg=7, seed=1).run({"q1": _run(n=3)}, qrels)
    assert sorted(examples[0].negative_ids) == ["q1p2", "q1p3"]


def test_queries_without_usable_pairs_are_skipped():
    qrels = Qrels(judgments={"q1": {"q1p1": 1}, "q2": {"q2p1": 2, "q2p2": 2}})
    runs = {"q1": _run("q1", 5), "q2": _run("q2", 2)}
    examples, skipped = NegativeSamplerService(n_neg=2).run(runs, qrels)
    assert examples == []
    assert skipped == 2


def test_sampling_is_deterministic_per_query():
    qrels = Qrels(judgments={"q1": {"q1p1": 2}, "q2": {"q2p4": 2}})
    sampler = NegativeSamplerService(n_neg=3, seed=9)
    alone, _ = sampler.run({"q1": _run("q1", 30)}, qrels)
    together, _ = sampler.run({"q2": _run("q2", 30), "q1": _run("q1", 30)}, qrels)
    assert [e.query_id for e in together] == ["q1", "q2"]
    assert together[0] == alone[0]
    other_seed, _ = NegativeSamplerService(n_neg=3, seed=10).run({"q1": _run("q1", 30)}, qrels)
    assert other_seed[0].positive_id == alone[0].positive_id


def test_parent_document_judgment_applies_to_passages():
    qrels = Qrels(judgments={"q": {"d2": 2}})
    run = {"q": make_list("q", [("d1#0", 0.9), ("d2#1", 0.8), ("d3#0", 0.7)])}
    examples, _ = NegativeSamplerService(n_neg=2).run(run, qrels)
    assert examples[0].positive_id == "d2#1"


def test_features_follow_candidate_order():
    qrels = Qrels(judgments={"q1": {"q1p2": 2}})
    run = {"q1": _run(n=3)}
    features = {"q1": {f"q1p{i}": [float(i)] * NUM_FEATURES for i in range(1, 4)}}
    (example,), _ = NegativeSamplerService(n_neg=2).run(run, qrels, features)
    assert [row[0] for row in example.features] == [float(pid[-1]) for pid in example.candidate_ids]

    del features["q1"]["q1p3"]
    with pytest.raises(KeyError):
        NegativeSamplerService(n_neg=2).run(run, qrels, features)


def test_n_neg_must_be_positive():
    with pytest.raises(ValueError):
        NegativeSamplerService(n_neg=0)
