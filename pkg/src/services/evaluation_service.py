# src/services/evaluation_service.py
import json
import logging
import math
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

import ir_measures
from ir_measures import AP, R, RR, nDCG
from pydantic import BaseModel, Field

from ..models.candidate_models import Run, RunEntry
from ..models.config_models import EvalConfig
from ..models.corpus_models import Qrels

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class MetricResult(BaseModel):
    """Per-query values and their mean; `skipped` counts queries with a zero denominator."""
    name: str
    per_query: Dict[str, float] = Field(default_factory=dict)
    mean: float = 0.0
    skipped: int = 0


def _rank_scores(entries: Sequence[RunEntry]) -> Dict[str, float]:
    """
    Scores that reproduce the run's rank order exactly.

    Ties in the original scores are already resolved by rank; a document
    listed twice keeps its best-ranked occurrence.
    """
    scores: Dict[str, float] = {}
    for entry in sorted(entries, key=lambda e: e.rank):
        if entry.doc_id not in scores:
            scores[entry.doc_id] = float(-len(scores))
    return scores


def _evaluate(name: str, measure, run: Run, qrels: Qrels,
              has_denominator: Callable[[Dict[str, int]], bool]) -> MetricResult:
    """
    Computes an ir_measures measure for every query in both run and qrels.

    Queries whose metric is undefined (`has_denominator` false) are skipped and
    counted; a judged query with an empty ranking scores 0.
    """
    eligible: List[str] = []
    skipped = 0
    for query_id in sorted(set(run) & set(qrels.judgments)):
        if has_denominator(qrels.for_query(query_id)):
            eligible.append(query_id)
        else:
            skipped += 1

    per_query = {query_id: 0.0 for query_id in eligible}
    measure_qrels = {query_id: dict(qrels.for_query(query_id)) for query_id in eligible}
    measure_run = {}
    for query_id in eligible:
        scores = _rank_scores(run[query_id])
        if scores:
            measure_run[query_id] = scores
    if measure_run:
        for metric in ir_measures.iter_calc([measure], measure_qrels, measure_run):
            per_query[metric.query_id] = float(metric.value)

    mean = math.fsum(per_query.values()) / len(per_query) if per_query else 0.0
    if skipped:
        logger.warning(f"{name}: {skipped} queries have no relevant judgments and were excluded.")
    return MetricResult(name=name, per_query=per_query, mean=mean, skipped=skipped)


def _has_positive_grade(grades: Dict[str, int]) -> bool:
    return any(g > 0 for g in grades.values())


def _reaches(rel_threshold: int) -> Callable[[Dict[str, int]], bool]:
    return lambda grades: any(g >= rel_threshold for g in grades.values())


def ndcg_at_k(run: Run, qrels: Qrels, k: int = 10) -> MetricResult:
    """
    NDCG@k with linear gain (gain = grade), the trec_eval `ndcg_cut` convention.

    Unjudged documents have gain 0; queries without any positive grade are skipped.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return _evaluate(f"NDCG@{k}", nDCG @ k, run, qrels, _has_positive_grade)


def average_precision(run: Run, qrels: Qrels, rel_threshold: int = 2) -> MetricResult:
    return _evaluate("AP", AP(rel=rel_threshold), run, qrels, _reaches(rel_threshold))


def recall_at_k(run: Run, qrels: Qrels, k: int = 1000, rel_threshold: int = 2) -> MetricResult:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return _evaluate(f"R@{k}", R(rel=rel_threshold) @ k, run, qrels, _reaches(rel_threshold))


def mrr_at_k(run: Run, qrels: Qrels, k: int = 100, rel_threshold: int = 2) -> MetricResult:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return _evaluate(f"MRR@{k}", RR(rel=rel_threshold) @ k, run, qrels, _reaches(rel_threshold))


class EvaluationService:
    """
    TREC-style evaluation of runs against graded qrels.

    Reports AP, NDCG@k, R@k and MRR@k in that order; binary metrics count a
    document as relevant when its grade reaches `rel_threshold`.
    """

    def __init__(self, config: Optional[EvalConfig] = None):
        logger.info("EvaluationService initialized.")
        self.config = config or EvalConfig()

    def metric_names(self) -> List[str]:
        c = self.config
        return ["AP", f"NDCG@{c.ndcg_k}", f"R@{c.recall_k}", f"MRR@{c.mrr_k}"]

    def run(self, run: Run, qrels: Qrels) -> Dict[str, MetricResult]:
        c = self.config
        results = [
            average_precision(run, qrels, c.rel_threshold),
            ndcg_at_k(run, qrels, c.ndcg_k),
            recall_at_k(run, qrels, c.recall_k, c.rel_threshold),
            mrr_at_k(run, qrels, c.mrr_k, c.rel_threshold),
        ]
        return {r.name: r for r in results}

    def ablation_report(self, runs: Mapping[str, Run], qrels: Qrels) -> List[Dict[str, float]]:
        """One row per named run: {"run": name, metric: mean, ...} in input order."""
        rows = []
        for name, run in runs.items():
            results = self.run(run, qrels)
            row: Dict[str, Union[str, float]] = {"run": name}
            row.update({metric: results[metric].mean for metric in self.metric_names()})
            rows.append(row)
        return rows

    def format_ablation(self, rows: Sequence[Mapping[str, float]]) -> str:
        names = self.metric_names()
        lines = ["\t".join(["run", *names])]
        for row in rows:
            lines.append("\t".join([str(row["run"]), *(f"{row[m]:.4f}" for m in names)]))
        return "\n".join(lines) + "\n"

    @staticmethod
    def format_per_query(results: Mapping[str, MetricResult]) -> str:
        """TSV lines `metric<TAB>query_id<TAB>value`, each metric closed by its `all` mean."""
        lines = []
        for name, result in results.items():
            for query_id in sorted(result.per_query):
                lines.append(f"{name}\t{query_id}\t{result.per_query[query_id]:.4f}")
            lines.append(f"{name}\tall\t{result.mean:.4f}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def format_summary(results: Mapping[str, MetricResult]) -> str:
        return "\n".join(f"{name}\t{result.mean:.4f}" for name, result in results.items()) + "\n"

    @staticmethod
    def save_metrics(results: Mapping[str, Mapping[str, MetricResult]], path: PathLike) -> None:
        """Writes {run name: {metric: {mean, skipped, per_query}}} as JSON."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        payload = {
            run_name: {name: r.model_dump(exclude={"name"}) for name, r in metrics.items()}
            for run_name, metrics in results.items()
        }
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
