# src/services/feature_extractor_service.py
import json
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from ..models.candidate_models import CandidateList
from ..models.corpus_models import Corpus, Query
from ..models.index_models import ImpactIndex, InvertedIndex, VectorStore
from ..models.training_models import NUM_FEATURES
from ..utils.concurrency import map_in_order
from ..utils.errors import FormatError
from ..utils.text_utils import tokenize
from ..utils.trec_io import iter_jsonl
from .bm25_indexer_service import bm25_score
from .dense_retriever_service import Embedder
from .impact_indexer_service import ImpactIndexerService, TermWeights

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
# query_id -> passage_id -> feature vector
FeatureTable = Dict[str, Dict[str, List[float]]]


class FeatureExtractorService:
    """
    Computes the fixed 7-feature vector of each (query, candidate) pair.

    Order: bm25 score, impact score, dense cosine, unique-term overlap
    |q & p| / |q|, reciprocal retrieval rank, log(1 + query length),
    log(1 + passage length). Backends that are not available contribute 0.
    """

    def __init__(
        self,
        corpus: Corpus,
        bm25_index: Optional[InvertedIndex] = None,
        impact_index: Optional[ImpactIndex] = None,
        vector_store: Optional[VectorStore] = None,
        embedder: Optional[Embedder] = None,
        k1: float = 1.2,
        b: float = 0.75,
        learned_query_weights: Optional[TermWeights] = None,
        query_vectors: Optional[Mapping[str, np.ndarray]] = None,
    ):
        logger.info("FeatureExtractorService initialized.")
        self.corpus = corpus
        self.bm25_index = bm25_index
        self.impact_index = impact_index
        self.vector_store = vector_store
        self.embedder = embedder
        self.k1 = k1
        self.b = b
        self.learned_query_weights = learned_query_weights
        self.query_vectors = query_vectors or {}

    def _query_vector(self, query: Query) -> Optional[np.ndarray]:
        if self.vector_store is None:
            return None
        if query.query_id in self.query_vectors:
            return np.asarray(self.query_vectors[query.query_id], dtype=np.float64)
        if self.embedder is None or not tokenize(query.text):
            return None
        return self.embedder.embed(query.text)

    def extract(self, query: Query, candidate_list: CandidateList) -> np.ndarray:
        """Feature matrix with one row per candidate, in list order."""
        query_tokens = tokenize(query.text)
        unique_query_tokens = set(query_tokens)
        query_weights = ImpactIndexerService.query_weights_for(query, self.learned_query_weights)
        query_vector = self._query_vector(query)

        rows = np.zeros((len(candidate_list), NUM_FEATURES), dtype=np.float64)
        for i, candidate in enumerate(candidate_list.candidates):
            passage = self.corpus.get(candidate.passage_id)
            passage_tokens = tokenize(passage.text) if passage is not None else []
            row = rows[i]

            if self.bm25_index is not None:
                ordinal = self.bm25_index.id_table.get_ordinal(candidate.passage_id)
                if ordinal is not None:
                    row[0] = bm25_score(self.bm25_index, query_tokens, ordinal, self.k1, self.b)
            if self.impact_index is not None:
                ordinal = self.impact_index.id_table.get_ordinal(candidate.passage_id)
                if ordinal is not None:
                    row[1] = math.fsum(w * self.impact_index.weight(t, ordinal) for t, w in sorted(query_weights.items()))
            if query_vector is not None and candidate.passage_id in self.vector_store.id_table:
                row[2] = float(self.vector_store.vector(candidate.passage_id) @ query_vector)
            if unique_query_tokens:
                row[3] = len(unique_query_tokens & set(passage_tokens)) / len(unique_query_tokens)
            row[4] = 1.0 / candidate.retrieval_rank
            row[5] = math.log1p(len(query_tokens))
            row[6] = math.log1p(len(passage_tokens))
        return rows

    def run(self, queries: Iterable[Query], lists: Mapping[str, CandidateList], threads: int = 1) -> FeatureTable:
        queries = [q for q in queries if q.query_id in lists]
        matrices = map_in_order(lambda q: self.extract(q, lists[q.query_id]), queries, threads, desc="Features")
        table: FeatureTable = {}
        for query, matrix in zip(queries, matrices):
            table[query.query_id] = {
                pid: row.tolist() for pid, row in zip(lists[query.query_id].passage_ids, matrix)
            }
        logger.info(f"Extracted features for {sum(len(v) for v in table.values())} pairs over {len(table)} queries.")
        return table

    @staticmethod
    def save_features(table: FeatureTable, path: PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            for query_id in sorted(table):
                for passage_id, features in table[query_id].items():
                    f.write(json.dumps({"query_id": query_id, "passage_id": passage_id,
                                        "features": features}) + "\n")

    @staticmethod
    def load_features(path: PathLike) -> FeatureTable:
        table: FeatureTable = {}
        for line_number, record in iter_jsonl(path):
            features = record.get("features")
            if "query_id" not in record or "passage_id" not in record or not isinstance(features, list):
                raise FormatError(path, line_number, "expected fields 'query_id', 'passage_id', 'features'")
            if len(features) != NUM_FEATURES:
                raise FormatError(path, line_number, f"expected {NUM_FEATURES} features, found {len(features)}")
            try:
                row = [float(v) for v in features]
            except (TypeError, ValueError) as e:
                raise FormatError(path, line_number, f"bad feature value: {e}")
            if not all(math.isfinite(v) for v in row):
                raise FormatError(path, line_number, "features must be finite")
            table.setdefault(str(record["query_id"]), {})[str(record["passage_id"])] = row
        return table
