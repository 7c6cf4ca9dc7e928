# src/services/dense_retriever_service.py
import hashlib
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Tuple, Union

import numpy as np

from ..models.candidate_models import CandidateList
from ..models.config_models import DenseConfig
from ..models.corpus_models import Corpus, Query
from ..models.id_table import IdTable
from ..models.index_models import VectorStore
from ..utils.concurrency import map_in_order
from ..utils.errors import DimensionMismatchError, DuplicateIdError, FormatError, UnknownIdError
from ..utils.text_utils import tokenize
from ..utils.trec_io import iter_lines

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
NORM_TOLERANCE = 1e-6


class Embedder(Protocol):
    """Anything that maps text to a unit vector of a fixed dimension."""
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def hash_slot(feature: str, dim: int, seed: int) -> Tuple[int, float]:
    """Seeded hash of a token or bigram feature to (index in [0, dim), sign in {-1, +1})."""
    digest = hashlib.blake2b(f"{seed}\x1f{feature}".encode('utf-8'), digest_size=8).digest()
    value = int.from_bytes(digest, 'little')
    return value % dim, (1.0 if (value >> 63) == 0 else -1.0)


def hash_embed(text: str, dim: int = 256, seed: int = 42) -> np.ndarray:
    """
    Signed feature hashing of unigrams and adjacent bigrams, L2-normalized.

    Raises:
        ValueError: if the text has no tokens ("unembeddable empty text").
    """
    if dim < 8:
        raise ValueError(f"dim must be >= 8, got {dim}")
    tokens = tokenize(text)
    features = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
    vector = np.zeros(dim, dtype=np.float64)
    for feature in features:
        index, sign = hash_slot(feature, dim, seed)
        vector[index] += sign
    norm = np.linalg.norm(vector)
    if norm == 0.0:
        raise ValueError("unembeddable empty text")
    return vector / norm


class HashEmbedder:
    """Deterministic stand-in for a neural text encoder."""

    def __init__(self, dim: int = 256, seed: int = 42):
        if dim < 8:
            raise ValueError(f"dim must be >= 8, got {dim}")
        self.dim = dim
        self.seed = seed

    def embed(self, text: str) -> np.ndarray:
        return hash_embed(text, self.dim, self.seed)


def _unit_rows(identifier_rows: List[Tuple[str, np.ndarray]]) -> np.ndarray:
    matrix = np.vstack([row for _, row in identifier_rows]) if identifier_rows else np.zeros((0, 0))
    norms = np.linalg.norm(matrix, axis=1) if matrix.size else np.zeros(0)
    for (identifier, _), norm in zip(identifier_rows, norms):
        if norm == 0.0:
            raise ValueError(f"vector of '{identifier}' has zero norm")
    return matrix / norms[:, None] if matrix.size else matrix


class DenseRetrieverService:
    """
    Two-tower retrieval: exact inner-product top-k over unit passage vectors.

    The store is exhaustive, so results equal brute-force scoring; an
    approximate backend could sit behind the same `retrieve` contract.
    """

    def __init__(self, config: Optional[DenseConfig] = None):
        logger.info("DenseRetrieverService initialized.")
        self.config = config or DenseConfig()

    def embedder(self) -> HashEmbedder:
        return HashEmbedder(self.config.dim, self.config.seed)

    def build(self, corpus: Corpus, embedder: Optional[Embedder] = None, threads: int = 1) -> VectorStore:
        """
        Embeds every passage; passages without tokens get no vector.

        Like passages missing from a vector file, they are never returned by
        dense retrieval and their dense feature is 0.
        """
        embedder = embedder or self.embedder()

        def embed_passage(passage) -> Optional[np.ndarray]:
            if not tokenize(passage.text):
                return None
            return embedder.embed(passage.text)

        rows = map_in_order(embed_passage, corpus.passages, threads, desc="Embedding")
        kept = [(p.passage_id, row) for p, row in zip(corpus.passages, rows) if row is not None]
        if len(kept) < len(rows):
            logger.warning(f"{len(rows) - len(kept)} passages have no tokens and were not embedded.")
        vectors = np.vstack([row for _, row in kept]) if kept else np.zeros((0, embedder.dim))
        store = VectorStore(vectors, IdTable([passage_id for passage_id, _ in kept]))
        logger.info(f"Built vector store with {len(store)} vectors of dim {store.dim}.")
        return store

    def retrieve(self, store: VectorStore, query_id: str, query_vector: np.ndarray, k: int) -> CandidateList:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        query_vector = np.asarray(query_vector, dtype=np.float64)
        if query_vector.shape != (store.dim,):
            raise DimensionMismatchError(
                f"query '{query_id}' vector has shape {query_vector.shape}, store dim is {store.dim}"
            )
        scores = store.vectors @ query_vector
        ordinals = np.arange(len(store), dtype=np.int64)
        return store.id_table.to_candidate_list(query_id, ordinals, scores, k, "dense")

    def retrieve_all(self, store: VectorStore, queries: Iterable[Query], k: int,
                     embedder: Optional[Embedder] = None,
                     query_vectors: Optional[Dict[str, np.ndarray]] = None,
                     threads: int = 1) -> Dict[str, CandidateList]:
        queries = list(queries)
        embedder = embedder or self.embedder()

        def search(query: Query) -> Optional[CandidateList]:
            if query_vectors is not None and query.query_id in query_vectors:
                vector = query_vectors[query.query_id]
            elif tokenize(query.text):
                vector = embedder.embed(query.text)
            else:
                return None
            return self.retrieve(store, query.query_id, vector, k)

        results = map_in_order(search, queries, threads, desc="Dense")
        empty = sum(1 for r in results if r is None)
        if empty:
            logger.warning(f"{empty} queries have no tokens and no precomputed vector; their dense lists are empty.")
        return {q.query_id: (r if r is not None else CandidateList(query_id=q.query_id))
                for q, r in zip(queries, results)}

    @staticmethod
    def read_vector_file(path: PathLike) -> List[Tuple[str, np.ndarray]]:
        """Reads `id<TAB>v1,...,vd` lines (optional `#dim=<d>` header) without normalizing."""
        rows: List[Tuple[str, np.ndarray]] = []
        seen = set()
        dim: Optional[int] = None
        for line_number, line in iter_lines(path):
            if line.startswith('#'):
                if line.startswith('#dim='):
                    try:
                        dim = int(line[len('#dim='):])
                    except ValueError:
                        raise FormatError(path, line_number, f"bad dimension header '{line}'")
                continue
            identifier, sep, values = line.partition('\t')
            identifier = identifier.strip()
            if not sep or not identifier:
                raise FormatError(path, line_number, "expected 'id<TAB>v1,...,vd'")
            try:
                vector = np.asarray([float(v) for v in values.split(',')], dtype=np.float64)
            except ValueError as e:
                raise FormatError(path, line_number, f"bad vector component: {e}")
            if dim is None:
                dim = vector.size
            if vector.size != dim:
                raise DimensionMismatchError(f"vector of '{identifier}' has dim {vector.size}, expected {dim}")
            if identifier in seen:
                raise DuplicateIdError("vector id", identifier, str(path))
            seen.add(identifier)
            rows.append((identifier, vector))
        return rows

    def load_vectors(self, path: PathLike, corpus: Optional[Corpus] = None) -> VectorStore:
        """Loads passage vectors, re-normalizing each to unit length; ordinals follow file order."""
        rows = self.read_vector_file(path)
        if corpus is not None:
            for identifier, _ in rows:
                if identifier not in corpus:
                    raise UnknownIdError("vector passage_id", identifier)
            if len(rows) < len(corpus):
                logger.warning(f"{len(corpus) - len(rows)} passages have no vector in {path}.")
        vectors = _unit_rows(rows)
        if not rows:
            vectors = np.zeros((0, self.config.dim))
        store = VectorStore(vectors, IdTable([identifier for identifier, _ in rows]))
        logger.info(f"Loaded {len(store)} vectors of dim {store.dim} from {path}.")
        return store

    def load_query_vectors(self, path: PathLike) -> Dict[str, np.ndarray]:
        rows = self.read_vector_file(path)
        return dict(zip([identifier for identifier, _ in rows], _unit_rows(rows)))

    @staticmethod
    def save_vectors(store: VectorStore, path: PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(f"#dim={store.dim}\n")
            for identifier, vector in zip(store.id_table.ids, store.vectors):
                f.write(f"{identifier}\t{','.join(repr(float(v)) for v in vector)}\n")
        logger.info(f"Saved {len(store)} vectors to {path}.")
