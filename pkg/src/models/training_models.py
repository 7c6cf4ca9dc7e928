# src/models/training_models.py
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

# Fixed order of the interaction-scorer features.
FEATURE_NAMES = (
    "bm25_score",
    "impact_score",
    "dense_cosine",
    "term_overlap",
    "reciprocal_rank",
    "log_query_length",
    "log_passage_length",
)
NUM_FEATURES = len(FEATURE_NAMES)


class TrainingExample(BaseModel):
    """One positive and its sampled negatives; `features` rows follow [positive, *negatives]."""
    model_config = ConfigDict(frozen=True)

    query_id: str
    positive_id: str
    negative_ids: List[str] = Field(min_length=1)
    features: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def _check_example(self) -> "TrainingExample":
        if self.positive_id in self.negative_ids:
            raise ValueError(f"positive '{self.positive_id}' is also a negative for query '{self.query_id}'")
        if self.features is not None:
            if len(self.features) != 1 + len(self.negative_ids):
                raise ValueError("features must have one row per candidate")
            if any(len(row) != NUM_FEATURES for row in self.features):
                raise ValueError(f"feature rows must have {NUM_FEATURES} values")
        return self

    @property
    def candidate_ids(self) -> List[str]:
        return [self.positive_id, *self.negative_ids]


class RankedList(BaseModel):
    """
    Input of the list-wise re-ranker for one query.

    `retrieval_ranks` are stage-1 (fused) positions, `ranking_scores` the
    per-list minmax-normalized stage-2 scores, both in stage-2 order.
    """
    model_config = ConfigDict(frozen=True)

    query_id: str
    passage_ids: List[str]
    retrieval_ranks: List[int]
    ranking_scores: List[float]
    positive_index: Optional[int] = None

    @model_validator(mode="after")
    def _check_list(self) -> "RankedList":
        n = len(self.passage_ids)
        if len(self.retrieval_ranks) != n or len(self.ranking_scores) != n:
            raise ValueError(f"ranked list of query '{self.query_id}' has mismatched field lengths")
        if any(rank < 1 for rank in self.retrieval_ranks):
            raise ValueError("retrieval ranks are 1-based")
        if self.positive_index is not None and not 0 <= self.positive_index < n:
            raise ValueError(f"positive index {self.positive_index} out of range for list of {n}")
        return self

    def __len__(self) -> int:
        return len(self.passage_ids)

    @property
    def positive_id(self) -> Optional[str]:
        return None if self.positive_index is None else self.passage_ids[self.positive_index]
