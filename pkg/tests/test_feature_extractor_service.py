# tests/test_feature_extractor_service.py
import math

import numpy as np
import pytest

from src.models.corpus_models import Query
from src.services.bm25_indexer_service import Bm25IndexerService
from src.services.dense_retriever_service import DenseRetrieverService
from src.services.feature_extractor_service import FeatureExtractorService
from src.services.impact_indexer_service import ImpactIndexerService
from src.utils.errors import FormatError
from tests.conftest import make_list


@pytest.fixture
def extractor(hand_corpus):
    bm25 = Bm25IndexerService().build(hand_corpus)
    impact_service = ImpactIndexerService()
    impact = impact_service.build(impact_service.default_term_weights(hand_corpus), hand_corpus.passage_ids)
    dense = DenseRetrieverService()
    return FeatureExtractorService(hand_corpus, bm25, impact, dense.build(hand_corpus), dense.embedder())


def test_feature_values_match_each_backend(extractor, hand_corpus):
    query = Query(query_id="q", text="a b")
    candidates = make_list("q", [("d1", 3.0), ("d2", 2.0), ("d3", 1.0)])
    rows = extractor.extract(query, candidates)
    assert rows.shape == (3, 7)

    bm25_run = Bm25IndexerService().retrieve(extractor.bm25_index, query, 10)
    bm25 = {c.passage_id: c.retrieval_score for c in bm25_run.candidates}
    assert rows[0, 0] == pytest.approx(bm25["d1"], rel=1e-12)
    assert rows[1, 0] == pytest.approx(bm25["d2"], rel=1e-12)
    assert rows[2, 0] == 0.0

    weights = ImpactIndexerService.default_term_weights(hand_corpus)
    assert rows[0, 1] == pytest.approx(weights["d1"]["a"] + weights["d1"]["b"])
    assert rows[2, 1] == 0.0

    query_vector = extractor.embedder.embed("a b")
    assert rows[1, 2] == pytest.approx(float(extractor.vector_store.vector("d2") @ query_vector))

    assert list(rows[:, 3]) == [1.0, 0.5, 0.0]
    assert list(rows[:, 4]) == [1.0, 0.5, 1.0 / 3.0]
    assert list(rows[:, 5]) == [math.log1p(2)] * 3
    assert list(rows[:, 6]) == [math.log1p(3), math.log1p(2), math.log1p(3)]


def test_missing_backends_contribute_zero(hand_corpus):
    rows = FeatureExtractorService(hand_corpus).extract(Query(query_id="q", text="c"),
                                                        make_list("q", [("d3", 1.0), ("zz", 0.5)]))
    assert list(rows[0, :3]) == [0.0, 0.0, 0.0]
    assert rows[0, 3] == 1.0
    assert rows[1, 3] == 0.0
    assert rows[1, 6] == 0.0
    assert rows[1, 4] == 0.5


def test_precomputed_query_vectors_are_preferred(hand_corpus):
    dense = DenseRetrieverService()
    store = dense.build(hand_corpus)
    vector = store.vector("d3").copy()
    service = FeatureExtractorService(hand_corpus, vector_store=store, query_vectors={"q": vector})
    rows = service.extract(Query(query_id="q", text=""), make_list("q", [("d3", 1.0)]))
    assert rows[0, 2] == pytest.approx(1.0)


def test_run_builds_table_for_listed_queries(extractor):
    queries = [Query(query_id="q1", text="a"), Query(query_id="q2", text="c"), Query(query_id="q3", text="b")]
    lists = {"q1": make_list("q1", [("d1", 1.0)]), "q2": make_list("q2", [("d3", 1.0), ("d2", 0.5)])}
    table = extractor.run(queries, lists, threads=2)
    assert sorted(table) == ["q1", "q2"]
    assert list(table["q2"]) == ["d3", "d2"]
    assert table["q2"]["d2"] == extractor.extract(queries[1], lists["q2"])[1].tolist()


def test_feature_file_round_trip(tmp_path, extractor):
    lists = {"q": make_list("q", [("d1", 1.0), ("d2", 0.5)])}
    table = extractor.run([Query(query_id="q", text="a b")], lists)
    path = tmp_path / "features.jsonl"
    FeatureExtractorService.save_features(table, path)
    assert FeatureExtractorService.load_features(path) == table


@pytest.mark.parametrize("line", [
    '{"query_id": "q", "passage_id": "p", "features": [1, 2]}',
    '{"query_id": "q", "features": [1, 2, 3, 4, 5, 6, 7]}',
    '{"query_id": "q", "passage_id": "p", "features": [1, 2, 3, 4, 5, 6, "x"]}',
    'not json',
])
def test_bad_feature_lines(tmp_path, line):
    path = tmp_path / "features.jsonl"
    path.write_text(line + "\n")
    with pytest.raises(FormatError):
        FeatureExtractorService.load_features(path)


def test_rows_are_float64(extractor):
    rows = extractor.extract(Query(query_id="q", text="a"), make_list("q", [("d1", 1.0)]))
    assert rows.dtype == np.float64
