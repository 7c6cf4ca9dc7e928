# src/services/pipeline_runner_service.py
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from ..models.candidate_models import (
    Candidate,
    CandidateList,
    Run,
    ScoreTable,
    candidates_from_run,
    run_from_candidates,
)
from ..models.config_models import FusionSource, PipelineConfig
from ..models.corpus_models import Corpus, Qrels, Query
from ..models.index_models import ImpactIndex, InvertedIndex, VectorStore
from ..utils.errors import StageError
from ..utils.torch_utils import configure_torch
from ..utils.trec_io import read_run, write_run
from .bm25_indexer_service import Bm25IndexerService
from .corpus_loader_service import CorpusLoaderService
from .dense_retriever_service import DenseRetrieverService
from .evaluation_service import EvaluationService, MetricResult
from .feature_extractor_service import FeatureExtractorService
from .hlatr_service import HlatrModel, HlatrService, to_ranked_list
from .impact_indexer_service import ImpactIndexerService, TermWeights
from .interaction_scorer_service import InteractionScorer, InteractionScorerService
from .maxp_aggregator_service import MaxPAggregatorService
from .negative_sampler_service import NegativeSamplerService
from .score_ensemble_service import ScoreEnsembleService
from .score_fusion_service import ScoreFusionService

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
RankingLists = Dict[str, CandidateList]


def truncate_lists(lists: RankingLists, k: int) -> RankingLists:
    """Keeps the first k candidates of every list (their retrieval ranks stay 1..k)."""
    return {qid: CandidateList(query_id=qid, candidates=cl.candidates[:k]) for qid, cl in lists.items()}


@dataclass
class PipelineResult:
    """Paths of every persisted run, the final run and the metrics per run name."""
    runs: Dict[str, Path] = field(default_factory=dict)
    final_run: Optional[Path] = None
    final_stage: Optional[str] = None
    metrics: Dict[str, Dict[str, MetricResult]] = field(default_factory=dict)


class PipelineRunnerService:
    """
    Orchestrates retrieval, fusion, ranking, HLATR re-ranking and MaxP.

    Enabled stages run in order; each persists its output as `<stage>.run` in
    the output directory (tagged with the stage name) and `final.run` is a copy
    of the last one. Indexes are built from the corpus unless prebuilt
    artifacts are configured, and are cached for the lifetime of the runner.
    """

    def __init__(self, config: PipelineConfig):
        logger.info("PipelineRunnerService initialized.")
        self.config = config
        self.threads = config.runtime.threads
        self.output_dir = Path(config.runtime.output_dir)
        self.loader = CorpusLoaderService(config.corpus)
        self.bm25_service = Bm25IndexerService(config.sparse)
        self.impact_service = ImpactIndexerService(config.impact)
        self.dense_service = DenseRetrieverService(config.dense)
        self.fusion_service = ScoreFusionService(config.fusion)
        self.ensemble_service = ScoreEnsembleService()
        self.scorer_service = InteractionScorerService(config.ranking.scorer)
        self.hlatr_service = HlatrService(config.hlatr)
        self.maxp_service = MaxPAggregatorService()
        self.evaluation_service = EvaluationService(config.eval)

        self.corpus: Optional[Corpus] = None
        self._bm25_index: Optional[InvertedIndex] = None
        self._impact_index: Optional[ImpactIndex] = None
        self._vector_store: Optional[VectorStore] = None
        self._learned_query_weights: Optional[TermWeights] = None
        self._query_vectors = None
        self._feature_extractor: Optional[FeatureExtractorService] = None

    # --- Inputs and artifacts ---

    def load_corpus(self) -> Corpus:
        if not self.config.corpus.path:
            raise StageError("retrieval", "corpus.path is not configured")
        self._require(self.config.corpus.path, "retrieval", "corpus")
        self.corpus = self.loader.load_corpus(self.config.corpus.path)
        return self.corpus

    def load_inputs(self) -> Tuple[Corpus, List[Query], Optional[Qrels]]:
        c = self.config.corpus
        if not c.queries_path:
            raise StageError("retrieval", "corpus.queries_path is not configured")
        corpus = self.load_corpus()
        queries = self.loader.load_queries(self._require(c.queries_path, "retrieval", "queries"))
        qrels_path = self._require(c.qrels_path, "eval", "qrels")
        qrels = self.loader.load_qrels(qrels_path) if qrels_path else None
        return corpus, queries, qrels

    def load_training_inputs(self, queries: List[Query], qrels: Optional[Qrels],
                             stage: str) -> Tuple[List[Query], Qrels]:
        c = self.config.corpus
        if c.train_queries_path and c.train_qrels_path:
            return self.loader.load_queries(c.train_queries_path), self.loader.load_qrels(c.train_qrels_path)
        if qrels is None:
            raise StageError(stage, "training needs corpus.train_qrels_path or corpus.qrels_path")
        logger.warning(f"No training split configured; {stage} trains on the evaluation queries.")
        return queries, qrels

    @staticmethod
    def _require(path: Optional[str], stage: str, what: str) -> Optional[Path]:
        if path is None:
            return None
        if not Path(path).exists():
            raise StageError(stage, f"{what} not found at {path}")
        return Path(path)

    def bm25_index(self) -> InvertedIndex:
        if self._bm25_index is None:
            index_path = self._require(self.config.sparse.index_path, "retrieval", "sparse index")
            if index_path is not None:
                self._bm25_index = self.bm25_service.load_index(index_path)
            else:
                expansions_path = self._require(self.config.sparse.expansions_path, "retrieval", "expansion file")
                expansions = self.bm25_service.load_expansions(expansions_path) if expansions_path else None
                self._bm25_index = self.bm25_service.build(self.corpus, expansions)
        return self._bm25_index

    def impact_index(self) -> ImpactIndex:
        if self._impact_index is None:
            index_path = self._require(self.config.impact.index_path, "retrieval", "impact index")
            if index_path is not None:
                self._impact_index = self.impact_service.load_index(index_path)
            else:
                weights_path = self._require(self.config.impact.weights_path, "retrieval", "term-weight file")
                weights = (self.impact_service.load_term_weights(weights_path) if weights_path
                           else self.impact_service.default_term_weights(self.corpus))
                self._impact_index = self.impact_service.build(weights, self.corpus.passage_ids)
            query_weights_path = self._require(self.config.impact.query_weights_path, "retrieval", "query weights")
            if query_weights_path is not None:
                self._learned_query_weights = self.impact_service.load_term_weights(query_weights_path)
        return self._impact_index

    def vector_store(self) -> VectorStore:
        if self._vector_store is None:
            vectors_path = self._require(self.config.dense.vectors_path, "retrieval", "passage vectors")
            if vectors_path is not None:
                self._vector_store = self.dense_service.load_vectors(vectors_path, self.corpus)
            else:
                self._vector_store = self.dense_service.build(self.corpus, threads=self.threads)
            query_vectors_path = self._require(self.config.dense.query_vectors_path, "retrieval", "query vectors")
            if query_vectors_path is not None:
                self._query_vectors = self.dense_service.load_query_vectors(query_vectors_path)
        return self._vector_store

    def feature_extractor(self) -> FeatureExtractorService:
        if self._feature_extractor is None:
            kinds = {s.kind for s in self.config.fusion.sources}
            self._feature_extractor = FeatureExtractorService(
                self.corpus,
                bm25_index=self.bm25_index(),
                impact_index=self.impact_index() if "impact" in kinds else None,
                vector_store=self.vector_store() if "dense" in kinds else None,
                embedder=self.dense_service.embedder(),
                k1=self.config.sparse.k1,
                b=self.config.sparse.b,
                learned_query_weights=self._learned_query_weights,
                query_vectors=self._query_vectors,
            )
        return self._feature_extractor

    # --- Stages ---

    def retrieve_source(self, source: FusionSource, queries: Sequence[Query]) -> RankingLists:
        depth = self.config.fusion.depth
        if source.kind == "bm25":
            return self.bm25_service.retrieve_all(self.bm25_index(), queries, depth, self.threads)
        if source.kind == "impact":
            index = self.impact_index()
            return self.impact_service.retrieve_all(index, queries, depth, self._learned_query_weights, self.threads)
        if source.kind == "dense":
            store = self.vector_store()
            return self.dense_service.retrieve_all(store, queries, depth, query_vectors=self._query_vectors,
                                                   threads=self.threads)
        run_path = self._require(source.path, "retrieval", f"run of source '{source.name}'")
        wanted = {q.query_id for q in queries}
        lists = candidates_from_run(read_run(run_path), source.name)
        return truncate_lists({qid: cl for qid, cl in lists.items() if qid in wanted}, depth)

    def retrieval_stage(self, queries: Sequence[Query]) -> Tuple[Dict[str, RankingLists], RankingLists]:
        """Runs every fusion source and fuses them; returns (per-source lists, fused lists)."""
        source_runs = {source.name: self.retrieve_source(source, queries) for source in self.config.fusion.sources}
        fused = self.fusion_service.run(source_runs)
        return source_runs, fused

    def train_scorer(self, train_queries: List[Query], train_qrels: Qrels,
                     train_fused: RankingLists) -> InteractionScorer:
        features = self.feature_extractor().run(train_queries, train_fused, self.threads)
        scorer_config = self.config.ranking.scorer
        sampler = NegativeSamplerService(scorer_config.n_neg, scorer_config.seed, scorer_config.rel_threshold)
        examples, _ = sampler.run(train_fused, train_qrels, features)
        if not examples:
            raise StageError("ranking", "no training examples: no retrieved candidate is judged relevant")
        return self.scorer_service.train(examples)

    def scorer_model(self, train_data: Optional[Tuple[List[Query], Qrels, RankingLists]]) -> InteractionScorer:
        scorer_config = self.config.ranking.scorer
        if not scorer_config.train:
            model_path = self._require(scorer_config.model_path, "ranking", "scorer model")
            if model_path is None:
                raise StageError("ranking", "ranking.scorer.train is off and no model_path is configured")
            return self.scorer_service.load_model(model_path)
        if train_data is None:
            raise StageError("ranking", "scorer training needs training queries and qrels")
        model = self.train_scorer(*train_data)
        self.scorer_service.save_model(model, self.output_dir / "scorer.pt")
        return model

    def ranking_stage(self, queries: Sequence[Query], fused: RankingLists,
                      scorer: Optional[InteractionScorer], candidates: Optional[int] = None) -> RankingLists:
        """Rescores the top fused candidates with the scorer and any external score files."""
        ranking_config = self.config.ranking
        lists = truncate_lists(fused, candidates or ranking_config.candidates)
        tables: List[ScoreTable] = []
        weights: List[float] = []
        if scorer is not None:
            features = self.feature_extractor().run(queries, lists, self.threads)
            tables.append(self.scorer_service.rescore(scorer, lists, features))
            weights.append(ranking_config.scorer.weight)
        for source in ranking_config.score_files:
            path = self._require(source.path, "ranking", "score file")
            tables.append(self.ensemble_service.load_score_file(path))
            weights.append(source.weight)
        if not tables:
            raise StageError("ranking", "no scorer enabled and no score files configured")
        return self.ensemble_service.apply_scores(lists, self.ensemble_service.ensemble_scores(tables, weights))

    def interpolation_stage(self, ranking_lists: RankingLists) -> Optional[RankingLists]:
        weight = self.config.ranking.interpolate_weight
        if weight is None:
            return None
        return {qid: self.fusion_service.interpolate_stages(cl, weight) for qid, cl in ranking_lists.items()}

    def hlatr_model(self, train_ranking_lists: Optional[RankingLists], train_qrels: Optional[Qrels]) -> HlatrModel:
        hlatr_config = self.config.hlatr
        if not hlatr_config.train:
            model_path = self._require(hlatr_config.model_path, "hlatr", "HLATR model")
            if model_path is None:
                raise StageError("hlatr", "hlatr.train is off and no model_path is configured")
            return self.hlatr_service.load_model(model_path)
        if train_ranking_lists is None or train_qrels is None:
            raise StageError("hlatr", "HLATR training needs training queries and qrels")
        lists = [
            to_ranked_list(train_ranking_lists[qid], hlatr_config.max_list_length, train_qrels,
                           hlatr_config.rel_threshold)
            for qid in sorted(train_ranking_lists)
        ]
        lists = [rl for rl in lists if rl.positive_index is not None and len(rl) >= 2]
        if not lists:
            raise StageError("hlatr", "no training list contains a relevant candidate")
        self.hlatr_service.write_training_lists(lists, self.output_dir / "hlatr-train.jsonl")
        model = self.hlatr_service.train(lists)
        self.hlatr_service.save_model(model, self.output_dir / "hlatr.pt")
        return model

    # --- Orchestration ---

    def _persist(self, result: PipelineResult, runs: Dict[str, Run], name: str,
                 lists: RankingLists, score_field: str) -> Run:
        run = run_from_candidates(lists, name, score_field)
        path = self.output_dir / f"{name}.run"
        write_run(run, path)
        result.runs[name] = path
        runs[name] = run
        return run

    def run(self) -> PipelineResult:
        """
        Executes the enabled stages and writes their runs, `final.run` and,
        with qrels, `metrics.json` and `ablation.tsv`.

        Raises:
            StageError: If an enabled stage lacks one of its prerequisites.
        """
        configure_torch(1)
        stages = self.config.stages
        self.output_dir.mkdir(parents=True, exist_ok=True)
        corpus, queries, qrels = self.load_inputs()
        result = PipelineResult()
        runs: Dict[str, Run] = {}
        last_stage: Optional[str] = None

        if stages.retrieval:
            source_runs, fused = self.retrieval_stage(queries)
            for name in sorted(source_runs):
                self._persist(result, runs, f"retrieval-{name}", source_runs[name], "retrieval_score")
            self._persist(result, runs, "fused", fused, "retrieval_score")
            last_stage = "fused"
        else:
            fused_path = self.output_dir / "fused.run"
            if stages.ranking or stages.hlatr or stages.maxp:
                if not fused_path.exists():
                    raise StageError("ranking", f"retrieval is disabled and no fused run exists at {fused_path}")
                runs["fused"] = read_run(fused_path)
                fused = candidates_from_run(runs["fused"], "fused")
                result.runs["fused"] = fused_path
                last_stage = "fused"

        ranking_lists: Optional[RankingLists] = None
        if stages.ranking:
            train_queries, train_qrels, train_fused = self._training_split(queries, qrels, fused, "ranking")
            scorer = None
            if self.config.ranking.scorer.enabled:
                scorer = self.scorer_model((train_queries, train_qrels, train_fused) if train_qrels else None)
            ranking_lists = self.ranking_stage(queries, fused, scorer)
            self._persist(result, runs, "ranking", ranking_lists, "ranking_score")
            last_stage = "ranking"
            interpolated = self.interpolation_stage(ranking_lists)
            if interpolated is not None:
                self._persist(result, runs, "interpolated", interpolated, "ranking_score")
                last_stage = "interpolated"
        elif stages.hlatr:
            raise StageError("hlatr", "HLATR needs ranking-stage scores; enable stages.ranking")

        if stages.hlatr:
            train_ranking_lists, train_qrels = None, None
            if self.config.hlatr.train:
                train_queries, train_qrels, train_fused = self._training_split(queries, qrels, fused, "hlatr")
                if train_queries is queries:
                    train_ranking_lists = ranking_lists
                else:
                    train_ranking_lists = self.ranking_stage(train_queries, train_fused, scorer)
            model = self.hlatr_model(train_ranking_lists, train_qrels)
            hlatr_lists = self.hlatr_service.rerank(model, ranking_lists, self.threads)
            self._persist(result, runs, "hlatr", hlatr_lists, "hlatr_score")
            last_stage = "hlatr"

        if stages.maxp:
            if last_stage is None:
                raise StageError("maxp", "no passage run to aggregate")
            runs["maxp"] = self.maxp_service.run(runs[last_stage], tag="maxp")
            result.runs["maxp"] = self.output_dir / "maxp.run"
            write_run(runs["maxp"], result.runs["maxp"])
            last_stage = "maxp"

        if last_stage is None:
            raise StageError("pipeline", "no stage is enabled")
        result.final_stage = last_stage
        result.final_run = self.output_dir / "final.run"
        shutil.copyfile(result.runs[last_stage], result.final_run)
        logger.info(f"Final run ({last_stage}) written to {result.final_run}.")

        if qrels is not None:
            result.metrics = {name: self.evaluation_service.run(run, qrels) for name, run in runs.items()}
            self.evaluation_service.save_metrics(result.metrics, self.output_dir / "metrics.json")
            ablation_runs = {name: run for name, run in runs.items()
                             if name.startswith("retrieval-") or name == "fused"}
            if ablation_runs:
                rows = self.evaluation_service.ablation_report(ablation_runs, qrels)
                with open(self.output_dir / "ablation.tsv", 'w', encoding='utf-8') as f:
                    f.write(self.evaluation_service.format_ablation(rows))
        return result

    def _training_split(self, queries: List[Query], qrels: Optional[Qrels], fused: RankingLists,
                        stage: str) -> Tuple[List[Query], Optional[Qrels], RankingLists]:
        """Training queries, qrels and fused lists; reuses the evaluation ones without a training split."""
        needs_training = ((stage == "ranking" and self.config.ranking.scorer.enabled and self.config.ranking.scorer.train)
                          or (stage == "hlatr" and self.config.hlatr.train))
        if not needs_training:
            return queries, qrels, fused
        train_queries, train_qrels = self.load_training_inputs(queries, qrels, stage)
        if train_queries is queries:
            return queries, train_qrels, fused
        _, train_fused = self.retrieval_stage(train_queries)
        return train_queries, train_qrels, train_fused

    def sweep_candidate_size(self, sizes: Sequence[int]) -> Tuple[List[Dict[str, float]], bool]:
        """
        Re-runs ranking (and HLATR / interpolation when enabled) restricted to
        the top-`size` fused candidates and reports NDCG@k of each stage per size.

        Returns:
            The rows in size order and whether the ranking-stage NDCG is
            non-increasing in the candidate-set size. The flag is reported, not
            enforced.
        """
        sizes = list(sizes)
        if not sizes or any(s < 1 for s in sizes) or sizes != sorted(sizes):
            raise ValueError(f"sizes must be ascending and >= 1, got {sizes}")
        configure_torch(1)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        _, queries, qrels = self.load_inputs()
        if qrels is None:
            raise StageError("sweep", "the candidate-size sweep needs corpus.qrels_path")
        _, fused = self.retrieval_stage(queries)
        train_queries, train_qrels, train_fused = self._training_split(queries, qrels, fused, "ranking")
        scorer = self.scorer_model((train_queries, train_qrels, train_fused)) if self.config.ranking.scorer.enabled else None
        if self.config.hlatr.train and self.config.stages.hlatr:
            train_queries, train_qrels, train_fused = self._training_split(queries, qrels, fused, "hlatr")

        ndcg_k = self.config.eval.ndcg_k
        metric = f"NDCG@{ndcg_k}"
        rows: List[Dict[str, float]] = []
        for size in sizes:
            ranking_lists = self.ranking_stage(queries, fused, scorer, candidates=size)
            row: Dict[str, float] = {"size": size}
            row["ranking"] = self._ndcg(ranking_lists, "ranking_score", qrels)
            interpolated = self.interpolation_stage(ranking_lists)
            if interpolated is not None:
                row["interpolated"] = self._ndcg(interpolated, "ranking_score", qrels)
            if self.config.stages.hlatr:
                train_lists = None
                if self.config.hlatr.train:
                    train_lists = (ranking_lists if train_queries is queries
                                   else self.ranking_stage(train_queries, train_fused, scorer, candidates=size))
                model = self.hlatr_model(train_lists, train_qrels)
                row["hlatr"] = self._ndcg(self.hlatr_service.rerank(model, ranking_lists, self.threads),
                                          "hlatr_score", qrels)
            logger.info(f"Sweep size {size}: " + ", ".join(f"{k} {metric} {v:.4f}" for k, v in row.items() if k != "size"))
            rows.append(row)

        ranking_values = [row["ranking"] for row in rows]
        non_increasing = all(a >= b for a, b in zip(ranking_values, ranking_values[1:]))
        logger.info(f"Ranking-stage {metric} is {'non-increasing' if non_increasing else 'not monotone'} "
                    f"in the candidate-set size.")
        self.write_sweep(rows, self.output_dir / "sweep.tsv", metric)
        return rows, non_increasing

    def _ndcg(self, lists: RankingLists, score_field: str, qrels: Qrels) -> float:
        run = run_from_candidates(lists, "sweep", score_field)
        return self.evaluation_service.run(run, qrels)[f"NDCG@{self.config.eval.ndcg_k}"].mean

    @staticmethod
    def write_sweep(rows: Sequence[Dict[str, float]], path: PathLike, metric: str) -> None:
        columns = ["size"] + [c for c in ("ranking", "interpolated", "hlatr") if rows and c in rows[0]]
        with open(path, 'w', encoding='utf-8') as f:
            f.write("\t".join(columns[:1] + [f"{c}_{metric}" for c in columns[1:]]) + "\n")
            for row in rows:
                f.write("\t".join([str(int(row["size"]))] + [f"{row[c]:.4f}" for c in columns[1:]]) + "\n")


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    return PipelineRunnerService(config).run()


def sweep_candidate_size(config: PipelineConfig, sizes: Sequence[int]) -> Tuple[List[Dict[str, float]], bool]:
    return PipelineRunnerService(config).sweep_candidate_size(sizes)


def ranking_lists_from_runs(fused_run: Run, ranking_run: Run) -> RankingLists:
    """
    Rebuilds ranking-stage lists from persisted runs: order and ranking scores
    come from the ranking run, retrieval ranks and scores from the fused run.
    """
    lists: RankingLists = {}
    for query_id, entries in ranking_run.items():
        fused = {e.doc_id: (position, e.score)
                 for position, e in enumerate(sorted(fused_run.get(query_id, []), key=lambda e: e.rank), start=1)}
        missing = [e.doc_id for e in entries if e.doc_id not in fused]
        if missing:
            raise StageError("hlatr", f"query '{query_id}': ranking run has passages absent from the fused run "
                                      f"({', '.join(missing[:3])})")
        candidates = []
        # ranks must form 1..n over the kept candidates, so re-rank within the ranking list
        kept = sorted(entries, key=lambda e: fused[e.doc_id][0])
        new_rank = {e.doc_id: i for i, e in enumerate(kept, start=1)}
        for e in sorted(entries, key=lambda e: e.rank):
            candidates.append(Candidate(passage_id=e.doc_id, retrieval_score=fused[e.doc_id][1],
                                        retrieval_rank=new_rank[e.doc_id], source_tag="ranking",
                                        ranking_score=e.score))
        lists[query_id] = CandidateList(query_id=query_id, candidates=candidates)
    return lists
