# src/services/score_fusion_service.py
import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..models.candidate_models import Candidate, CandidateList, rank_key
from ..models.config_models import FusionConfig, FusionSource

logger = logging.getLogger(__name__)

NORMALIZATIONS = ("minmax", "zscore", "none")


def normalize_values(values: Sequence[float], method: str) -> List[float]:
    """
    Per-list score normalization.

    minmax maps affinely onto [0, 1] (a constant list becomes all 1.0); zscore
    uses the population standard deviation (a constant list becomes all 0.0).
    Both are monotone, so the ranking never changes.
    """
    if method not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization '{method}', expected one of {NORMALIZATIONS}")
    if not values:
        raise ValueError("cannot normalize an empty score list")
    if method == "none":
        return [float(v) for v in values]
    array = np.asarray(values, dtype=np.float64)
    if method == "minmax":
        low, high = float(array.min()), float(array.max())
        if high == low:
            return [1.0] * len(values)
        return [(float(v) - low) / (high - low) for v in array]
    mean = float(array.mean())
    std = float(array.std())
    if std == 0.0:
        return [0.0] * len(values)
    return [(float(v) - mean) / std for v in array]


def check_weights(weights: Sequence[float], expected: int) -> None:
    if expected < 1 or len(weights) != expected:
        raise ValueError(f"need one weight per source: {expected} sources, {len(weights)} weights")
    if any(not w >= 0.0 for w in weights):
        raise ValueError(f"weights must be >= 0, got {list(weights)}")
    if all(w == 0.0 for w in weights):
        raise ValueError("weights must not all be zero")


class ScoreFusionService:
    """
    Weighted linear ensembling of candidate lists from any number of retrievers.

    Every list is normalized per query first; a passage missing from a list
    contributes 0 for that list. Sums use exactly rounded addition, so the
    fused scores do not depend on the order the lists are given in.
    """

    def __init__(self, config: Optional[FusionConfig] = None):
        logger.info("ScoreFusionService initialized.")
        self.config = config or FusionConfig()

    @staticmethod
    def normalize_scores(candidate_list: CandidateList, method: str = "minmax") -> CandidateList:
        if not candidate_list.candidates:
            raise ValueError(f"cannot normalize the empty candidate list of query '{candidate_list.query_id}'")
        normalized = normalize_values([c.retrieval_score for c in candidate_list.candidates], method)
        return CandidateList(
            query_id=candidate_list.query_id,
            candidates=[c.model_copy(update={"retrieval_score": s})
                        for c, s in zip(candidate_list.candidates, normalized)],
        )

    @staticmethod
    def weighted_fuse(lists: Sequence[CandidateList], weights: Sequence[float], k: int,
                      query_id: Optional[str] = None) -> CandidateList:
        """Fuses already-normalized lists: score(p) = sum_i w_i * s_i(p), absent -> 0."""
        check_weights(weights, len(lists))
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        query_id = query_id or lists[0].query_id
        contributions: Dict[str, List[float]] = {}
        for candidate_list, weight in zip(lists, weights):
            if weight == 0.0:
                continue  # a zero-weight source adds no candidates
            for candidate in candidate_list.candidates:
                contributions.setdefault(candidate.passage_id, []).append(weight * candidate.retrieval_score)
        fused = sorted(((pid, math.fsum(parts)) for pid, parts in contributions.items()),
                       key=lambda item: rank_key(item[0], item[1]))[:k]
        return CandidateList(
            query_id=query_id,
            candidates=[
                Candidate(passage_id=pid, retrieval_score=score, retrieval_rank=rank, source_tag="fused")
                for rank, (pid, score) in enumerate(fused, start=1)
            ],
        )

    def run(self, runs: Dict[str, Dict[str, CandidateList]],
            sources: Optional[Sequence[FusionSource]] = None,
            k: Optional[int] = None) -> Dict[str, CandidateList]:
        """
        Fuses per-query retrieval runs keyed by source name.

        Args:
            runs: source name -> query_id -> candidate list.
            sources: Fusion sources with weight and normalization; the configured one by default.
            k: Candidates kept per query.
        """
        sources = list(sources or self.config.sources)
        k = k or self.config.k
        check_weights([s.weight for s in sources], len(sources))
        for source in sources:
            if source.name not in runs:
                raise ValueError(f"no run for fusion source '{source.name}'")

        query_ids = sorted({qid for source in sources for qid in runs[source.name]})
        fused: Dict[str, CandidateList] = {}
        for query_id in query_ids:
            lists, weights = [], []
            for source in sources:
                candidate_list = runs[source.name].get(query_id)
                if candidate_list is None or not candidate_list.candidates:
                    continue
                lists.append(self.normalize_scores(candidate_list, source.normalization))
                weights.append(source.weight)
            if not lists or all(w == 0.0 for w in weights):
                fused[query_id] = CandidateList(query_id=query_id)
                continue
            fused[query_id] = self.weighted_fuse(lists, weights, k, query_id)
        logger.info(f"Fused {len(sources)} sources for {len(fused)} queries.")
        return fused

    @staticmethod
    def interpolate_stages(ranking_list: CandidateList, weight: float) -> CandidateList:
        """
        Weighted ensemble of the ranking stage with the retrieval stage.

        Over the ranking list's candidates, minmax-normalized ranking and
        retrieval scores are mixed as weight * ranking + (1 - weight) * retrieval;
        the result replaces the ranking score and retrieval ranks are kept.
        """
        if not 0.0 <= weight <= 1.0:
            raise ValueError(f"interpolation weight must lie in [0, 1], got {weight}")
        candidates = ranking_list.candidates
        if not candidates:
            return ranking_list
        if any(c.ranking_score is None for c in candidates):
            raise ValueError(f"query '{ranking_list.query_id}' has candidates without a ranking score")
        ranking = normalize_values([c.ranking_score for c in candidates], "minmax")
        retrieval = normalize_values([c.retrieval_score for c in candidates], "minmax")
        mixed = [
            c.model_copy(update={"ranking_score": math.fsum([weight * r, (1.0 - weight) * s]),
                                 "source_tag": "interpolated"})
            for c, r, s in zip(candidates, ranking, retrieval)
        ]
        mixed.sort(key=lambda c: rank_key(c.passage_id, c.ranking_score))
        return CandidateList(query_id=ranking_list.query_id, candidates=mixed)
