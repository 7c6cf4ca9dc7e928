# src/services/negative_sampler_service.py
import logging
import random
from typing import List, Mapping, Optional, Tuple

from ..models.candidate_models import CandidateList
from ..models.corpus_models import Qrels
from ..models.training_models import TrainingExample
from .feature_extractor_service import FeatureTable

logger = logging.getLogger(__name__)


class NegativeSamplerService:
    """
    Builds ranking-stage training examples from retrieval results.

    The positive is the highest-ranked candidate judged relevant; negatives are
    drawn without replacement from the candidates judged below the threshold or
    left unjudged. Each query gets its own seeded stream, so a query's sample
    does not depend on which other queries are present.
    """

    def __init__(self, n_neg: int = 7, seed: int = 42, rel_threshold: int = 2):
        logger.info("NegativeSamplerService initialized.")
        if n_neg < 1:
            raise ValueError(f"n_neg must be >= 1, got {n_neg}")
        self.n_neg = n_neg
        self.seed = seed
        self.rel_threshold = rel_threshold

    def run(
        self,
        retrieval_run: Mapping[str, CandidateList],
        qrels: Qrels,
        features: Optional[FeatureTable] = None,
    ) -> Tuple[List[TrainingExample], int]:
        """
        Returns:
            The training examples, in query id order, and the number of skipped
            queries (no relevant candidate, or nothing left to use as a negative).
        """
        examples: List[TrainingExample] = []
        skipped = 0
        short = 0
        for query_id in sorted(retrieval_run):
            candidates = retrieval_run[query_id].candidates
            positive = None
            pool = []
            for candidate in candidates:
                grade = qrels.passage_grade(query_id, candidate.passage_id)
                relevant = grade is not None and grade >= self.rel_threshold
                if relevant and positive is None:
                    positive = candidate.passage_id
                elif not relevant:
                    pool.append(candidate.passage_id)
            if positive is None or not pool:
                skipped += 1
                continue

            rng = random.Random(f"{self.seed}:{query_id}")
            negatives = rng.sample(pool, min(self.n_neg, len(pool)))
            if len(negatives) < self.n_neg:
                short += 1

            rows = None
            if features is not None:
                query_features = features.get(query_id, {})
                missing = [pid for pid in [positive, *negatives] if pid not in query_features]
                if missing:
                    raise KeyError(f"no features for query '{query_id}', passages {missing[:3]}")
                rows = [query_features[pid] for pid in [positive, *negatives]]
            examples.append(TrainingExample(query_id=query_id, positive_id=positive,
                                            negative_ids=negatives, features=rows))

        if skipped:
            logger.warning(f"Skipped {skipped} queries without a usable positive/negative pair.")
        if short:
            logger.info(f"{short} queries had fewer than {self.n_neg} negatives available.")
        logger.info(f"Sampled {len(examples)} training examples.")
        return examples, skipped
