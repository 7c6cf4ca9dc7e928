# src/services/impact_indexer_service.py
import json
import logging
import math
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from ..models.candidate_models import CandidateList
from ..models.config_models import ImpactConfig
from ..models.corpus_models import Corpus, Query
from ..models.id_table import IdTable
from ..models.index_models import ImpactIndex
from ..utils.concurrency import map_in_order
from ..utils.errors import DuplicateIdError, FormatError, UnknownIdError
from ..utils.text_utils import tokenize
from ..utils.trec_io import iter_jsonl
from .bm25_indexer_service import bm25_idf

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
TermWeights = Dict[str, Dict[str, float]]
INDEX_FORMAT = "impact-index"
INDEX_VERSION = 1


def _check_weights(owner: str, weights: Mapping[str, float]) -> None:
    for term, weight in weights.items():
        if not weight >= 0.0 or math.isinf(weight):
            raise ValueError(f"weight of term '{term}' for '{owner}' must be a finite value >= 0, got {weight}")


class ImpactIndexerService:
    """
    Impact-scored retrieval over precomputed term weights.

    Learned sparse weights arrive as term-weight files; without them the
    analytic fallback ln(1 + tf) * idf keeps the stage runnable. A passage's
    score is the dot product of query and passage term weights.
    """

    def __init__(self, config: Optional[ImpactConfig] = None):
        logger.info("ImpactIndexerService initialized.")
        self.config = config or ImpactConfig()

    @staticmethod
    def default_term_weights(corpus: Corpus) -> TermWeights:
        counts = [Counter(tokenize(p.text)) for p in corpus.passages]
        document_frequency: Counter = Counter()
        for tf in counts:
            document_frequency.update(tf.keys())
        doc_count = len(corpus)
        idf = {term: bm25_idf(df, doc_count) for term, df in document_frequency.items()}
        return {
            passage.passage_id: {term: math.log1p(tf) * idf[term] for term, tf in sorted(tf_map.items())}
            for passage, tf_map in zip(corpus.passages, counts)
        }

    def build(self, weights: Mapping[str, Mapping[str, float]],
              passage_ids: Optional[Sequence[str]] = None) -> ImpactIndex:
        """
        Builds the impact index; ordinals follow `passage_ids` (corpus order) when
        given, otherwise the order of `weights`.
        """
        id_table = IdTable(list(passage_ids) if passage_ids is not None else list(weights))
        term_ordinals: Dict[str, List[int]] = {}
        term_weights: Dict[str, List[float]] = {}
        rows = []
        for passage_id, passage_weights in weights.items():
            ordinal = id_table.get_ordinal(passage_id)
            if ordinal is None:
                raise UnknownIdError("term-weight passage_id", passage_id)
            _check_weights(passage_id, passage_weights)
            rows.append((ordinal, passage_weights))
        for ordinal, passage_weights in sorted(rows, key=lambda row: row[0]):
            for term, weight in passage_weights.items():
                term_ordinals.setdefault(term, []).append(ordinal)
                term_weights.setdefault(term, []).append(float(weight))

        postings = {
            term: (np.asarray(term_ordinals[term], dtype=np.int64), np.asarray(term_weights[term], dtype=np.float64))
            for term in term_ordinals
        }
        logger.info(f"Built impact index over {len(id_table)} passages ({len(postings)} terms).")
        return ImpactIndex(postings, id_table)

    @staticmethod
    def query_weights_for(query: Query, learned: Optional[TermWeights] = None) -> Dict[str, float]:
        """Learned weights for the query when available, else weight 1 per unique token."""
        if learned is not None and query.query_id in learned:
            return dict(learned[query.query_id])
        return {term: 1.0 for term in sorted(set(tokenize(query.text)))}

    def retrieve(self, index: ImpactIndex, query_id: str, query_weights: Mapping[str, float],
                 k: int) -> CandidateList:
        """Exhaustive dot-product scoring over the postings of the weighted query terms."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        _check_weights(query_id, query_weights)
        scores = np.zeros(index.doc_count, dtype=np.float64)
        matched = np.zeros(index.doc_count, dtype=bool)
        for term in sorted(query_weights):
            entry = index.postings.get(term)
            if entry is None:
                continue
            ordinals, weights = entry
            scores[ordinals] += query_weights[term] * weights
            matched[ordinals] = True
        candidates = np.flatnonzero(matched)
        return index.id_table.to_candidate_list(query_id, candidates, scores[candidates], k, "impact")

    def retrieve_all(self, index: ImpactIndex, queries: Iterable[Query], k: int,
                     learned_query_weights: Optional[TermWeights] = None,
                     threads: int = 1) -> Dict[str, CandidateList]:
        queries = list(queries)
        results = map_in_order(
            lambda q: self.retrieve(index, q.query_id, self.query_weights_for(q, learned_query_weights), k),
            queries, threads, desc="Impact",
        )
        return {q.query_id: r for q, r in zip(queries, results)}

    @staticmethod
    def load_term_weights(path: PathLike) -> TermWeights:
        """Reads `{"id": ..., "weights": {term: weight}}` records."""
        table: TermWeights = {}
        for line_number, record in iter_jsonl(path):
            identifier = record.get("id")
            weights = record.get("weights")
            if identifier is None or not isinstance(weights, dict):
                raise FormatError(path, line_number, "expected fields 'id' and 'weights'")
            identifier = str(identifier)
            if identifier in table:
                raise DuplicateIdError("id", identifier, str(path))
            try:
                parsed = {str(term): float(weight) for term, weight in weights.items()}
                _check_weights(identifier, parsed)
            except (TypeError, ValueError) as e:
                raise FormatError(path, line_number, str(e))
            table[identifier] = parsed
        logger.info(f"Loaded term weights for {len(table)} ids from {path}.")
        return table

    @staticmethod
    def save_term_weights(weights: Mapping[str, Mapping[str, float]], path: PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            for identifier, term_weights in weights.items():
                f.write(json.dumps({"id": identifier, "weights": dict(term_weights)}) + "\n")

    @staticmethod
    def save_index(index: ImpactIndex, path: PathLike) -> None:
        """Same layout as the inverted index: header, id table, one record per term."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(json.dumps({"format": INDEX_FORMAT, "version": INDEX_VERSION,
                                "doc_count": index.doc_count}) + "\n")
            f.write(json.dumps({"ids": list(index.id_table.ids)}) + "\n")
            for term in index.terms():
                ordinals, weights = index.postings[term]
                f.write(json.dumps({"term": term, "ordinals": ordinals.tolist(),
                                    "weights": weights.tolist()}) + "\n")
        logger.info(f"Saved impact index to {path}.")

    @staticmethod
    def load_index(path: PathLike) -> ImpactIndex:
        records = iter_jsonl(path)
        header_line, header = next(records, (1, {}))
        if header.get("format") != INDEX_FORMAT or header.get("version") != INDEX_VERSION:
            raise FormatError(path, header_line, f"not a version {INDEX_VERSION} {INDEX_FORMAT} file")
        table_line, table = next(records, (2, {}))
        if "ids" not in table:
            raise FormatError(path, table_line, "missing id table record")
        postings = {}
        for line_number, record in records:
            try:
                postings[record["term"]] = (np.asarray(record["ordinals"], dtype=np.int64),
                                            np.asarray(record["weights"], dtype=np.float64))
            except KeyError as e:
                raise FormatError(path, line_number, f"postings record lacks {e}")
        return ImpactIndex(postings, IdTable(table["ids"]))
