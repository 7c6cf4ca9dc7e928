# src/models/index_models.py
from typing import Dict, Iterator, Tuple

import numpy as np

from .id_table import IdTable
from ..utils.errors import DimensionMismatchError

Postings = Tuple[np.ndarray, np.ndarray]

_EMPTY_ORDINALS = np.zeros(0, dtype=np.int64)


def _lookup(postings: Dict[str, Postings], term: str, ordinal: int, default):
    entry = postings.get(term)
    if entry is None:
        return default
    ordinals, values = entry
    i = int(np.searchsorted(ordinals, ordinal))
    if i < ordinals.size and ordinals[i] == ordinal:
        return values[i]
    return default


class InvertedIndex:
    """
    Term -> (ordinals, term frequencies) postings with per-passage lengths.

    Postings arrays are sorted by ordinal; the index is never mutated after
    construction.
    """

    def __init__(self, postings: Dict[str, Postings], doc_lengths: np.ndarray, id_table: IdTable):
        self.postings = postings
        self.doc_lengths = np.asarray(doc_lengths, dtype=np.int64)
        self.id_table = id_table
        self.doc_count = int(self.doc_lengths.size)
        self.avg_doc_length = float(self.doc_lengths.sum() / self.doc_count) if self.doc_count else 0.0

    def document_frequency(self, term: str) -> int:
        entry = self.postings.get(term)
        return 0 if entry is None else int(entry[0].size)

    def term_frequency(self, term: str, ordinal: int) -> int:
        return int(_lookup(self.postings, term, ordinal, 0))

    def terms(self) -> Iterator[str]:
        return iter(sorted(self.postings))


class ImpactIndex:
    """Term -> (ordinals, non-negative weights) postings."""

    def __init__(self, postings: Dict[str, Postings], id_table: IdTable):
        self.postings = postings
        self.id_table = id_table
        self.doc_count = len(id_table)

    def weight(self, term: str, ordinal: int) -> float:
        return float(_lookup(self.postings, term, ordinal, 0.0))

    def terms(self) -> Iterator[str]:
        return iter(sorted(self.postings))


class VectorStore:
    """Unit-normalized passage vectors in ordinal order (rows of a float64 matrix)."""

    def __init__(self, vectors: np.ndarray, id_table: IdTable):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(id_table):
            raise DimensionMismatchError(
                f"expected {len(id_table)} vectors, got array of shape {vectors.shape}"
            )
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.id_table = id_table
        self.dim = int(vectors.shape[1])

    def vector(self, passage_id: str) -> np.ndarray:
        return self.vectors[self.id_table.ordinal(passage_id)]

    def __len__(self) -> int:
        return self.vectors.shape[0]
