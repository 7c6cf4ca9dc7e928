# src/services/bm25_indexer_service.py
import json
import logging
import math
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from ..models.candidate_models import CandidateList
from ..models.config_models import SparseConfig
from ..models.corpus_models import Corpus, Query
from ..models.id_table import IdTable
from ..models.index_models import InvertedIndex
from ..utils.concurrency import map_in_order
from ..utils.errors import FormatError, UnknownIdError
from ..utils.text_utils import tokenize
from ..utils.trec_io import iter_jsonl, iter_lines

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
INDEX_FORMAT = "inverted-index"
INDEX_VERSION = 1


def bm25_idf(document_frequency: int, doc_count: int) -> float:
    """Lucene-smoothed idf, ln(1 + (N - df + 0.5) / (df + 0.5)); never negative."""
    return math.log(1.0 + (doc_count - document_frequency + 0.5) / (document_frequency + 0.5))


def _term_contribution(idf, tf, doc_length, avg_doc_length, k1, b):
    # Works element-wise on numpy arrays and on plain floats alike.
    return idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc_length / avg_doc_length))


def bm25_score(index: InvertedIndex, query_tokens: Sequence[str], ordinal: int,
               k1: float = 1.2, b: float = 0.75) -> float:
    """Okapi BM25 of one passage; terms absent from the passage contribute nothing."""
    if k1 < 0 or not 0.0 <= b <= 1.0:
        raise ValueError(f"BM25 needs k1 >= 0 and 0 <= b <= 1, got k1={k1}, b={b}")
    score = 0.0
    doc_length = float(index.doc_lengths[ordinal])
    for term in sorted(set(query_tokens)):
        tf = index.term_frequency(term, ordinal)
        if tf == 0:
            continue
        idf = bm25_idf(index.document_frequency(term), index.doc_count)
        score += float(_term_contribution(idf, float(tf), doc_length, index.avg_doc_length, k1, b))
    return score


class Bm25IndexerService:
    """
    Builds, persists and searches the BM25 inverted index.

    Passages may be expanded doc2query-style: expansion text is tokenized and
    appended to the passage tokens before term frequencies and lengths are
    counted. Search is exhaustive over the postings of the query terms.
    """

    def __init__(self, config: Optional[SparseConfig] = None):
        logger.info("Bm25IndexerService initialized.")
        self.config = config or SparseConfig()

    def build(self, corpus: Corpus, expansions: Optional[Dict[str, str]] = None) -> InvertedIndex:
        expansions = expansions or {}
        for passage_id in expansions:
            if passage_id not in corpus:
                raise UnknownIdError("expansion passage_id", passage_id)

        id_table = IdTable(corpus.passage_ids)
        term_ordinals: Dict[str, List[int]] = {}
        term_freqs: Dict[str, List[int]] = {}
        doc_lengths = np.zeros(len(corpus), dtype=np.int64)

        for ordinal, passage in enumerate(tqdm(corpus.passages, desc="Indexing BM25", disable=None, leave=False)):
            tokens = tokenize(passage.text)
            if passage.passage_id in expansions:
                tokens = tokens + tokenize(expansions[passage.passage_id])
            doc_lengths[ordinal] = len(tokens)
            for term, tf in Counter(tokens).items():
                term_ordinals.setdefault(term, []).append(ordinal)
                term_freqs.setdefault(term, []).append(tf)

        postings = {
            term: (np.asarray(term_ordinals[term], dtype=np.int64), np.asarray(term_freqs[term], dtype=np.int64))
            for term in term_ordinals
        }
        index = InvertedIndex(postings, doc_lengths, id_table)
        logger.info(
            f"Built inverted index over {index.doc_count} passages "
            f"({len(postings)} terms, {len(expansions)} expanded)."
        )
        return index

    def retrieve(self, index: InvertedIndex, query: Query, k: int,
                 k1: Optional[float] = None, b: Optional[float] = None) -> CandidateList:
        """Top-k passages by BM25, ties broken by passage id; fewer than k matches give a shorter list."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        k1 = self.config.k1 if k1 is None else k1
        b = self.config.b if b is None else b
        if k1 < 0 or not 0.0 <= b <= 1.0:
            raise ValueError(f"BM25 needs k1 >= 0 and 0 <= b <= 1, got k1={k1}, b={b}")

        scores = np.zeros(index.doc_count, dtype=np.float64)
        matched = np.zeros(index.doc_count, dtype=bool)
        for term in sorted(set(tokenize(query.text))):
            entry = index.postings.get(term)
            if entry is None:
                continue
            ordinals, tfs = entry
            idf = bm25_idf(ordinals.size, index.doc_count)
            scores[ordinals] += _term_contribution(
                idf, tfs.astype(np.float64), index.doc_lengths[ordinals].astype(np.float64),
                index.avg_doc_length, k1, b,
            )
            matched[ordinals] = True

        candidates = np.flatnonzero(matched)
        return index.id_table.to_candidate_list(query.query_id, candidates, scores[candidates], k, "bm25")

    def retrieve_all(self, index: InvertedIndex, queries: Iterable[Query], k: int,
                     threads: int = 1) -> Dict[str, CandidateList]:
        queries = list(queries)
        results = map_in_order(lambda q: self.retrieve(index, q, k), queries, threads, desc="BM25")
        return {q.query_id: r for q, r in zip(queries, results)}

    @staticmethod
    def load_expansions(path: PathLike) -> Dict[str, str]:
        """Reads `passage_id<TAB>expansion text`; repeated ids have their texts concatenated."""
        expansions: Dict[str, str] = {}
        for line_number, line in iter_lines(path):
            passage_id, sep, text = line.partition('\t')
            if not sep or not passage_id.strip():
                raise FormatError(path, line_number, "expected 'passage_id<TAB>expansion text'")
            passage_id = passage_id.strip()
            expansions[passage_id] = f"{expansions[passage_id]} {text}" if passage_id in expansions else text
        logger.info(f"Loaded expansions for {len(expansions)} passages from {path}.")
        return expansions

    @staticmethod
    def save_index(index: InvertedIndex, path: PathLike) -> None:
        """
        Line-delimited JSON: a header record, the id table with passage lengths,
        then one postings record per term in sorted term order.
        """
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(json.dumps({"format": INDEX_FORMAT, "version": INDEX_VERSION,
                                "doc_count": index.doc_count}) + "\n")
            f.write(json.dumps({"ids": list(index.id_table.ids),
                                "doc_lengths": index.doc_lengths.tolist()}) + "\n")
            for term in index.terms():
                ordinals, tfs = index.postings[term]
                f.write(json.dumps({"term": term, "ordinals": ordinals.tolist(), "tfs": tfs.tolist()}) + "\n")
        logger.info(f"Saved inverted index to {path}.")

    @staticmethod
    def load_index(path: PathLike) -> InvertedIndex:
        records = iter_jsonl(path)
        header_line, header = next(records, (1, {}))
        if header.get("format") != INDEX_FORMAT or header.get("version") != INDEX_VERSION:
            raise FormatError(path, header_line, f"not a version {INDEX_VERSION} {INDEX_FORMAT} file")
        table_line, table = next(records, (2, {}))
        if "ids" not in table or "doc_lengths" not in table:
            raise FormatError(path, table_line, "missing id table record")
        postings = {}
        for line_number, record in records:
            try:
                postings[record["term"]] = (np.asarray(record["ordinals"], dtype=np.int64),
                                            np.asarray(record["tfs"], dtype=np.int64))
            except KeyError as e:
                raise FormatError(path, line_number, f"postings record lacks {e}")
        return InvertedIndex(postings, np.asarray(table["doc_lengths"], dtype=np.int64), IdTable(table["ids"]))
