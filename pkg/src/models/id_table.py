# src/models/id_table.py
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..utils.errors import DuplicateIdError
from .candidate_models import Candidate, CandidateList


class IdTable:
    """
    Two-way mapping between passage ids and the dense integer ordinals indexes use.

    Besides the mapping it keeps, for every ordinal, the position of its id in
    ascending id order, which is what the tie rule (score desc, id asc) sorts on.
    """

    def __init__(self, ids: Sequence[str]):
        self._ids: Tuple[str, ...] = tuple(ids)
        self._ordinals: Dict[str, int] = {}
        for ordinal, identifier in enumerate(self._ids):
            if identifier in self._ordinals:
                raise DuplicateIdError("passage_id", identifier)
            self._ordinals[identifier] = ordinal
        id_order = np.empty(len(self._ids), dtype=np.int64)
        id_order[sorted(range(len(self._ids)), key=self._ids.__getitem__)] = np.arange(len(self._ids))
        self.id_order = id_order

    @property
    def ids(self) -> Tuple[str, ...]:
        return self._ids

    def ordinal(self, identifier: str) -> int:
        return self._ordinals[identifier]

    def get_ordinal(self, identifier: str, default=None):
        return self._ordinals.get(identifier, default)

    def id(self, ordinal: int) -> str:
        return self._ids[ordinal]

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, identifier: object) -> bool:
        return identifier in self._ordinals

    def top_k(self, ordinals: np.ndarray, scores: np.ndarray, k: int) -> List[Tuple[int, float]]:
        """Selects the k best (ordinal, score) pairs by score descending, then id ascending."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        ordinals = np.asarray(ordinals, dtype=np.int64)
        scores = np.asarray(scores, dtype=np.float64)
        if ordinals.size == 0:
            return []
        order = np.lexsort((self.id_order[ordinals], -scores))[:k]
        return [(int(ordinals[i]), float(scores[i])) for i in order]

    def to_candidate_list(
        self, query_id: str, ordinals: np.ndarray, scores: np.ndarray, k: int, source_tag: str
    ) -> CandidateList:
        best = self.top_k(ordinals, scores, k)
        return CandidateList(
            query_id=query_id,
            candidates=[
                Candidate(passage_id=self._ids[o], retrieval_score=s, retrieval_rank=rank, source_tag=source_tag)
                for rank, (o, s) in enumerate(best, start=1)
            ],
        )
