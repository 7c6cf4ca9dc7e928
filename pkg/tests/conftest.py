# tests/conftest.py
from pathlib import Path
from typing import Dict, List

import pytest

from src.models.candidate_models import Candidate, CandidateList
from src.models.config_models import PipelineConfig, SynthConfig
from src.models.corpus_models import Corpus, Passage
from src.services.synthetic_corpus_service import SyntheticCorpusService


def make_corpus(texts: Dict[str, str]) -> Corpus:
    return Corpus([Passage(passage_id=pid, parent_doc_id=pid, text=text) for pid, text in texts.items()])


def make_list(query_id: str, scored: List[tuple], source_tag: str = "test") -> CandidateList:
    """Builds a candidate list from (passage_id, score) pairs in the given order."""
    return CandidateList(
        query_id=query_id,
        candidates=[
            Candidate(passage_id=pid, retrieval_score=score, retrieval_rank=rank, source_tag=source_tag)
            for rank, (pid, score) in enumerate(scored, start=1)
        ],
    )


@pytest.fixture
def hand_corpus() -> Corpus:
    return make_corpus({"d1": "a b a", "d2": "b c", "d3": "c c c"})


@pytest.fixture(scope="session")
def small_collection(tmp_path_factory) -> Dict[str, Path]:
    """A small synthetic collection written to disk once per session."""
    config = SynthConfig(n_docs=300, n_queries=8, vocab=2000, seed=7)
    service = SyntheticCorpusService(config)
    corpus, queries, qrels = service.run()
    return service.write(corpus, queries, qrels, tmp_path_factory.mktemp("collection"))


def pipeline_config(collection: Dict[str, Path], output_dir: Path, **sections) -> PipelineConfig:
    """Fast pipeline configuration over a written collection; `sections` override whole sections."""
    data = {
        "corpus": {"path": str(collection["corpus"]), "queries_path": str(collection["queries"]),
                   "qrels_path": str(collection["qrels"])},
        "fusion": {"depth": 100, "k": 100, "sources": [
            {"name": "bm25", "kind": "bm25", "weight": 0.5},
            {"name": "dense", "kind": "dense", "weight": 0.5},
        ]},
        "ranking": {"candidates": 20, "scorer": {"epochs": 3}},
        "hlatr": {"d_model": 16, "n_layers": 1, "n_heads": 2, "ff_width": 32, "max_list_length": 20,
                  "epochs": 3, "batch_size": 4},
        "runtime": {"output_dir": str(output_dir)},
    }
    data.update(sections)
    return PipelineConfig.model_validate(data)
