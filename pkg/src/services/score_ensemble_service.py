# src/services/score_ensemble_service.py
import logging
import math
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

from ..models.candidate_models import CandidateList, ScoreTable, rank_key
from ..utils.trec_io import read_score_file
from .score_fusion_service import check_weights, normalize_values

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class ScoreEnsembleService:
    """
    Combines several ranking-stage scorers into one score per (query, passage).

    Each source is minmax-normalized per query over the passages it covers and
    the sources are summed with their weights, a missing score counting as 0,
    the same arithmetic the retrieval fusion uses.
    """

    def __init__(self):
        logger.info("ScoreEnsembleService initialized.")

    @staticmethod
    def load_score_file(path: PathLike) -> ScoreTable:
        table, _ = read_score_file(path)
        logger.info(f"Loaded scores for {len(table)} queries from {path}.")
        return table

    @staticmethod
    def ensemble_scores(sources: Sequence[Mapping[str, Mapping[str, float]]],
                        weights: Sequence[float]) -> ScoreTable:
        check_weights(weights, len(sources))
        parts: Dict[str, Dict[str, List[float]]] = {}
        for source, weight in zip(sources, weights):
            if weight == 0.0:
                continue
            for query_id, scores in source.items():
                query_parts = parts.setdefault(query_id, {})
                if not scores:
                    continue
                passage_ids = list(scores)
                normalized = normalize_values([scores[pid] for pid in passage_ids], "minmax")
                for pid, value in zip(passage_ids, normalized):
                    query_parts.setdefault(pid, []).append(weight * value)
        return {
            query_id: {pid: math.fsum(values) for pid, values in query_parts.items()}
            for query_id, query_parts in parts.items()
        }

    @staticmethod
    def apply_scores(lists: Mapping[str, CandidateList], table: Mapping[str, Mapping[str, float]],
                     source_tag: str = "ranking") -> Dict[str, CandidateList]:
        """
        Sets each candidate's ranking score (0 when no source scored it) and
        reorders by ranking score descending, then passage id.
        """
        ranked: Dict[str, CandidateList] = {}
        for query_id in sorted(lists):
            scores = table.get(query_id, {})
            candidates = [
                c.model_copy(update={"ranking_score": float(scores.get(c.passage_id, 0.0)), "source_tag": source_tag})
                for c in lists[query_id].candidates
            ]
            candidates.sort(key=lambda c: rank_key(c.passage_id, c.ranking_score))
            ranked[query_id] = CandidateList(query_id=query_id, candidates=candidates)
        return ranked
