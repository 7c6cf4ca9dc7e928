# pipeline_cli.py

# Command-line entry point and orchestrator of the hybrid retrieval and
# multi-stage ranking pipeline. Every subcommand loads the YAML configuration,
# instantiates the services it needs and persists its output as files in the
# runtime output directory, so stages can be run one at a time or all at once.

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from src.models.candidate_models import candidates_from_run, run_from_candidates
from src.models.config_models import PipelineConfig
from src.services.evaluation_service import EvaluationService
from src.services.hlatr_service import HlatrService, to_ranked_list
from src.services.maxp_aggregator_service import MaxPAggregatorService
from src.services.pipeline_runner_service import (
    PipelineRunnerService,
    ranking_lists_from_runs,
    truncate_lists,
)
from src.services.synthetic_corpus_service import SyntheticCorpusService
from src.utils.config_loader import apply_overrides, load_config
from src.utils.errors import PipelineError, StageError
from src.utils.torch_utils import configure_torch
from src.utils.trec_io import read_qrels, read_run, write_run

logger = logging.getLogger(__name__)


def _output_path(config: PipelineConfig, name: str) -> Path:
    return Path(config.runtime.output_dir) / name


def _read_stage_run(config: PipelineConfig, name: str, command: str, override: Optional[str] = None):
    path = Path(override) if override else _output_path(config, f"{name}.run")
    if not path.exists():
        raise StageError(command, f"{name} run not found at {path}")
    return read_run(path)


# --- Subcommands ---

def cmd_index_sparse(args, config: PipelineConfig) -> None:
    runner = PipelineRunnerService(config)
    corpus = runner.load_corpus()
    expansions_path = runner._require(config.sparse.expansions_path, "index-sparse", "expansion file")
    expansions = runner.bm25_service.load_expansions(expansions_path) if expansions_path else None
    index = runner.bm25_service.build(corpus, expansions)
    out = args.out or config.sparse.index_path or _output_path(config, "bm25-index.jsonl")
    runner.bm25_service.save_index(index, out)
    print(out)


def cmd_index_impact(args, config: PipelineConfig) -> None:
    runner = PipelineRunnerService(config)
    corpus = runner.load_corpus()
    weights_path = runner._require(config.impact.weights_path, "index-impact", "term-weight file")
    weights = (runner.impact_service.load_term_weights(weights_path) if weights_path
               else runner.impact_service.default_term_weights(corpus))
    index = runner.impact_service.build(weights, corpus.passage_ids)
    out = args.out or config.impact.index_path or _output_path(config, "impact-index.jsonl")
    runner.impact_service.save_index(index, out)
    print(out)


def cmd_index_dense(args, config: PipelineConfig) -> None:
    runner = PipelineRunnerService(config)
    corpus = runner.load_corpus()
    store = runner.dense_service.build(corpus, threads=config.runtime.threads)
    out = args.out or config.dense.vectors_path or _output_path(config, "dense-vectors.tsv")
    runner.dense_service.save_vectors(store, out)
    print(out)


def cmd_retrieve(args, config: PipelineConfig) -> None:
    runner = PipelineRunnerService(config)
    _, queries, _ = runner.load_inputs()
    sources = [s for s in config.fusion.sources if not args.source or s.name in args.source]
    if not sources:
        raise ValueError(f"no configured fusion source named {args.source}")
    for source in sources:
        name = f"retrieval-{source.name}"
        path = _output_path(config, f"{name}.run")
        write_run(run_from_candidates(runner.retrieve_source(source, queries), name), path)
        print(path)


def cmd_fuse(args, config: PipelineConfig) -> None:
    runner = PipelineRunnerService(config)
    runs = {}
    for source in config.fusion.sources:
        override = source.path if source.kind == "run" else None
        run = _read_stage_run(config, f"retrieval-{source.name}", "fuse", override)
        runs[source.name] = truncate_lists(candidates_from_run(run, source.name), config.fusion.depth)
    fused = runner.fusion_service.run(runs)
    path = _output_path(config, "fused.run")
    write_run(run_from_candidates(fused, "fused"), path)
    print(path)


def cmd_features(args, config: PipelineConfig) -> None:
    runner = PipelineRunnerService(config)
    _, queries, _ = runner.load_inputs()
    fused = candidates_from_run(_read_stage_run(config, "fused", "features", args.run), "fused")
    lists = truncate_lists(fused, config.ranking.candidates)
    table = runner.feature_extractor().run(queries, lists, config.runtime.threads)
    out = args.out or _output_path(config, "features.jsonl")
    runner.feature_extractor().save_features(table, out)
    print(out)


def cmd_train_scorer(args, config: PipelineConfig) -> None:
    runner = PipelineRunnerService(config)
    _, queries, qrels = runner.load_inputs()
    fused = candidates_from_run(_read_stage_run(config, "fused", "train-scorer"), "fused")
    train_queries, train_qrels, train_fused = runner._training_split(queries, qrels, fused, "ranking")
    if train_qrels is None:
        raise StageError("train-scorer", "training needs qrels")
    model = runner.train_scorer(train_queries, train_qrels, train_fused)
    out = args.out or config.ranking.scorer.model_path or _output_path(config, "scorer.pt")
    runner.scorer_service.save_model(model, out)
    print(out)


def cmd_rescore(args, config: PipelineConfig) -> None:
    runner = PipelineRunnerService(config)
    _, queries, _ = runner.load_inputs()
    fused = candidates_from_run(_read_stage_run(config, "fused", "rescore"), "fused")
    scorer = None
    if config.ranking.scorer.enabled:
        model_path = args.model or config.ranking.scorer.model_path or _output_path(config, "scorer.pt")
        scorer = runner.scorer_service.load_model(runner._require(str(model_path), "rescore", "scorer model"))
    ranking_lists = runner.ranking_stage(queries, fused, scorer)
    path = _output_path(config, "ranking.run")
    write_run(run_from_candidates(ranking_lists, "ranking", "ranking_score"), path)
    print(path)
    interpolated = runner.interpolation_stage(ranking_lists)
    if interpolated is not None:
        path = _output_path(config, "interpolated.run")
        write_run(run_from_candidates(interpolated, "interpolated", "ranking_score"), path)
        print(path)


def _stage_ranking_lists(config: PipelineConfig, command: str):
    fused_run = _read_stage_run(config, "fused", command)
    ranking_run = _read_stage_run(config, "ranking", command)
    return ranking_lists_from_runs(fused_run, ranking_run)


def cmd_train_hlatr(args, config: PipelineConfig) -> None:
    service = HlatrService(config.hlatr)
    if args.lists:
        lists = service.read_training_lists(args.lists)
    else:
        qrels_path = config.corpus.train_qrels_path or config.corpus.qrels_path
        if not qrels_path:
            raise StageError("train-hlatr", "training needs --lists or configured qrels")
        qrels = read_qrels(qrels_path)
        lists = [
            to_ranked_list(cl, config.hlatr.max_list_length, qrels, config.hlatr.rel_threshold)
            for _, cl in sorted(_stage_ranking_lists(config, "train-hlatr").items())
        ]
        lists = [rl for rl in lists if rl.positive_index is not None and len(rl) >= 2]
        service.write_training_lists(lists, _output_path(config, "hlatr-train.jsonl"))
    model = service.train(lists)
    out = args.out or config.hlatr.model_path or _output_path(config, "hlatr.pt")
    service.save_model(model, out)
    print(out)


def cmd_hlatr_rerank(args, config: PipelineConfig) -> None:
    service = HlatrService(config.hlatr)
    model_path = Path(args.model or config.hlatr.model_path or _output_path(config, "hlatr.pt"))
    if not model_path.exists():
        raise StageError("hlatr-rerank", f"HLATR model not found at {model_path}")
    model = service.load_model(model_path)
    reranked = service.rerank(model, _stage_ranking_lists(config, "hlatr-rerank"), config.runtime.threads)
    path = _output_path(config, "hlatr.run")
    write_run(run_from_candidates(reranked, "hlatr", "hlatr_score"), path)
    print(path)


def cmd_aggregate_maxp(args, config: PipelineConfig) -> None:
    document_run = MaxPAggregatorService().run(read_run(args.run), tag="maxp")
    out = args.out or _output_path(config, "maxp.run")
    write_run(document_run, out)
    print(out)


def cmd_eval(args, config: PipelineConfig) -> None:
    qrels_path = args.qrels or config.corpus.qrels_path
    if not qrels_path:
        raise ValueError("no qrels given (--qrels or corpus.qrels_path)")
    qrels = read_qrels(qrels_path)
    service = EvaluationService(config.eval)
    runs = {Path(path).stem: read_run(path) for path in args.run}
    if len(runs) > 1:
        sys.stdout.write(service.format_ablation(service.ablation_report(runs, qrels)))
    for name, run in runs.items():
        results = service.run(run, qrels)
        if len(runs) > 1 and args.per_query:
            sys.stdout.write(f"# {name}\n")
        if args.per_query:
            sys.stdout.write(service.format_per_query(results))
        elif len(runs) == 1:
            sys.stdout.write(service.format_summary(results))


def cmd_pipeline(args, config: PipelineConfig) -> None:
    result = PipelineRunnerService(config).run()
    print(result.final_run)
    final_metrics = result.metrics.get(result.final_stage, {})
    if final_metrics:
        sys.stdout.write(EvaluationService.format_summary(final_metrics))


def cmd_synth(args, config: PipelineConfig) -> None:
    service = SyntheticCorpusService(config.synth, config.dense)
    corpus, queries, qrels = service.run()
    paths = service.write(corpus, queries, qrels, args.out or _output_path(config, "synthetic"))
    for path in paths.values():
        print(path)


def cmd_sweep(args, config: PipelineConfig) -> None:
    runner = PipelineRunnerService(config)
    rows, non_increasing = runner.sweep_candidate_size(args.sizes)
    with open(runner.output_dir / "sweep.tsv", 'r', encoding='utf-8') as f:
        sys.stdout.write(f.read())
    print(f"ranking non-increasing in size: {str(non_increasing).lower()}")


COMMANDS: Dict[str, Callable] = {
    "index-sparse": cmd_index_sparse,
    "index-impact": cmd_index_impact,
    "index-dense": cmd_index_dense,
    "retrieve": cmd_retrieve,
    "fuse": cmd_fuse,
    "features": cmd_features,
    "train-scorer": cmd_train_scorer,
    "rescore": cmd_rescore,
    "train-hlatr": cmd_train_hlatr,
    "hlatr-rerank": cmd_hlatr_rerank,
    "aggregate-maxp": cmd_aggregate_maxp,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
    "synth": cmd_synth,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pipeline_cli.py",
        description="Hybrid sparse/dense retrieval with list-aware multi-stage re-ranking.",
    )
    parser.add_argument("--config", help="YAML configuration (default: config.yaml next to this script)")
    parser.add_argument("--seed", type=int, help="Override every seed in the configuration")
    parser.add_argument("--threads", type=int, help="Worker threads for per-query work")
    parser.add_argument("--output-dir", help="Directory for runs, indexes and models")
    parser.add_argument("--log-level", help="Logging level (default: runtime.log_level)")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name in ("index-sparse", "index-impact", "index-dense"):
        subparsers.add_parser(name).add_argument("--out", help="Output file")
    retrieve = subparsers.add_parser("retrieve")
    retrieve.add_argument("--source", action="append", help="Only this fusion source (repeatable)")
    subparsers.add_parser("fuse")
    features = subparsers.add_parser("features")
    features.add_argument("--run", help="Candidate run (default: fused.run)")
    features.add_argument("--out", help="Output feature file")
    subparsers.add_parser("train-scorer").add_argument("--out", help="Output checkpoint")
    subparsers.add_parser("rescore").add_argument("--model", help="Scorer checkpoint")
    train_hlatr = subparsers.add_parser("train-hlatr")
    train_hlatr.add_argument("--lists", help="Training-list file (default: built from fused/ranking runs)")
    train_hlatr.add_argument("--out", help="Output checkpoint")
    subparsers.add_parser("hlatr-rerank").add_argument("--model", help="HLATR checkpoint")
    maxp = subparsers.add_parser("aggregate-maxp")
    maxp.add_argument("--run", required=True, help="Passage-level run")
    maxp.add_argument("--out", help="Output document run")
    evaluate = subparsers.add_parser("eval")
    evaluate.add_argument("--run", action="append", required=True, help="Run file (repeatable)")
    evaluate.add_argument("--qrels", help="Qrels file (default: corpus.qrels_path)")
    evaluate.add_argument("--per-query", action="store_true", help="Emit per-query TSV")
    subparsers.add_parser("pipeline")
    subparsers.add_parser("synth").add_argument("--out", help="Output directory")
    sweep = subparsers.add_parser("sweep")
    sweep.add_argument("--sizes", type=int, nargs="+", default=[10, 50, 100], help="Candidate-set sizes")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=(args.log_level or "INFO").upper(),
                        format='%(asctime)s - %(levelname)s - %(name)s - %(message)s')
    try:
        config = apply_overrides(load_config(args.config), args.seed, args.threads, args.output_dir, args.log_level)
        logging.getLogger().setLevel(config.runtime.log_level.upper())
        configure_torch(1)
        COMMANDS[args.command](args, config)
    except (PipelineError, ValueError, OSError, KeyError) as e:
        where = e.stage if isinstance(e, StageError) else args.command
        message = " ".join(str(e).split())
        logger.debug(f"{args.command} failed", exc_info=True)
        print(f"error: {where}: {type(e).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
