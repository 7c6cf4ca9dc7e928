# tests/test_bm25_indexer_service.py
import math
import random

import pytest

from src.models.corpus_models import Corpus, Query
from src.services.bm25_indexer_service import Bm25IndexerService, bm25_score
from src.utils.errors import FormatError, UnknownIdError
from src.utils.text_utils import tokenize
from tests.conftest import make_corpus


def test_hand_derived_score(hand_corpus):
    index = Bm25IndexerService().build(hand_corpus)
    expected = math.log(8 / 3) * (2 * 2.2) / (2 + 1.2 * (0.25 + 0.75 * 9 / 8))
    assert bm25_score(index, ["a"], index.id_table.ordinal("d1"), 1.2, 0.75) == pytest.approx(expected, abs=1e-9)
    assert bm25_score(index, ["a"], index.id_table.ordinal("d2"), 1.2, 0.75) == 0.0


def test_retrieve_matches_only_documents_with_query_terms(hand_corpus):
    service = Bm25IndexerService()
    result = service.retrieve(service.build(hand_corpus), Query(query_id="q", text="a"), k=10)
    assert result.passage_ids == ["d1"]
    assert result.candidates[0].retrieval_rank == 1
    assert result.candidates[0].source_tag == "bm25"


def test_k1_zero_sums_idf(hand_corpus):
    index = Bm25IndexerService().build(hand_corpus)
    ordinal = index.id_table.ordinal("d2")
    expected = math.log(1 + 1.5 / 2.5) * 2  # "b" and "c" both have df = 2
    assert bm25_score(index, ["b", "c"], ordinal, k1=0.0, b=0.75) == pytest.approx(expected, abs=1e-12)


def test_expansion_is_appended_before_counting():
    corpus = make_corpus({"p": "cats purr"})
    index = Bm25IndexerService().build(corpus, {"p": "do cats purr"})
    assert index.term_frequency("cats", 0) == 2
    assert index.term_frequency("purr", 0) == 2
    assert index.term_frequency("do", 0) == 1
    assert int(index.doc_lengths[0]) == 5


def test_unknown_expansion_id_is_rejected(hand_corpus):
    with pytest.raises(UnknownIdError, match="zz"):
        Bm25IndexerService().build(hand_corpus, {"zz": "text"})


def test_empty_corpus_retrieves_nothing():
    service = Bm25IndexerService()
    index = service.build(Corpus([]))
    assert index.doc_count == 0
    assert len(service.retrieve(index, Query(query_id="q", text="anything"), k=5)) == 0


def test_ties_are_broken_by_passage_id():
    service = Bm25IndexerService()
    index = service.build(make_corpus({"b": "same text", "a": "same text", "c": "other"}))
    result = service.retrieve(index, Query(query_id="q", text="same"), k=10)
    assert result.passage_ids == ["a", "b"]


def test_retrieve_matches_brute_force_on_random_corpus():
    rng = random.Random(3)
    vocab = [f"t{i}" for i in range(30)]
    texts = {f"d{i:02d}": " ".join(rng.choices(vocab, k=rng.randint(3, 20))) for i in range(50)}
    corpus = make_corpus(texts)
    service = Bm25IndexerService()
    index = service.build(corpus)
    for trial in range(10):
        query = Query(query_id=f"q{trial}", text=" ".join(rng.sample(vocab, 3)))
        query_tokens = tokenize(query.text)
        brute = []
        for pid in corpus.passage_ids:
            if set(query_tokens) & set(tokenize(texts[pid])):
                brute.append((pid, bm25_score(index, query_tokens, index.id_table.ordinal(pid))))
        brute.sort(key=lambda item: (-item[1], item[0]))
        result = service.retrieve(index, query, k=10)
        assert result.passage_ids == [pid for pid, _ in brute[:10]]
        for candidate, (_, score) in zip(result.candidates, brute):
            assert candidate.retrieval_score == pytest.approx(score, abs=1e-12)


def test_adding_unrelated_document_keeps_candidate_set():
    service = Bm25IndexerService()
    query = Query(query_id="q", text="alpha")
    base = make_corpus({"d1": "alpha beta", "d2": "alpha alpha gamma"})
    grown = make_corpus({"d1": "alpha beta", "d2": "alpha alpha gamma", "d3": "delta"})
    before = service.retrieve(service.build(base), query, k=5)
    after = service.retrieve(service.build(grown), query, k=5)
    assert before.passage_ids == after.passage_ids
    assert all(c.retrieval_score >= 0 for c in after.candidates)


def test_index_round_trip(tmp_path, hand_corpus):
    service = Bm25IndexerService()
    index = service.build(hand_corpus)
    path = tmp_path / "bm25.jsonl"
    service.save_index(index, path)
    loaded = service.load_index(path)
    assert loaded.id_table.ids == index.id_table.ids
    assert sorted(loaded.postings) == sorted(index.postings)
    query = Query(query_id="q", text="a c")
    assert service.retrieve(loaded, query, 3) == service.retrieve(index, query, 3)


def test_load_index_rejects_other_formats(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"format": "something-else", "version": 1}\n')
    with pytest.raises(FormatError):
        Bm25IndexerService.load_index(path)


def test_repeated_expansion_lines_are_concatenated(tmp_path):
    path = tmp_path / "expansions.tsv"
    path.write_text("p1\tfirst part\np1\tsecond part\n")
    assert Bm25IndexerService.load_expansions(path) == {"p1": "first part second part"}
