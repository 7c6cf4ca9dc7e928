# src/models/config_models.py
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CorpusConfig(_Section):
    path: Optional[str] = None
    format: Literal["jsonl", "tsv"] = "jsonl"
    kind: Literal["passage", "document"] = "passage"
    split_documents: bool = True
    window: int = Field(default=180, ge=1)
    stride: int = Field(default=90, ge=1)
    queries_path: Optional[str] = None
    qrels_path: Optional[str] = None
    train_queries_path: Optional[str] = None
    train_qrels_path: Optional[str] = None

    @model_validator(mode="after")
    def _check_window(self) -> "CorpusConfig":
        if self.stride > self.window:
            raise ValueError(f"stride {self.stride} must not exceed window {self.window}")
        return self


class SparseConfig(_Section):
    k1: float = Field(default=1.2, ge=0.0)
    b: float = Field(default=0.75, ge=0.0, le=1.0)
    expansions_path: Optional[str] = None
    index_path: Optional[str] = None


class ImpactConfig(_Section):
    weights_path: Optional[str] = None
    query_weights_path: Optional[str] = None
    index_path: Optional[str] = None


class DenseConfig(_Section):
    dim: int = Field(default=256, ge=8)
    seed: int = 42
    vectors_path: Optional[str] = None
    query_vectors_path: Optional[str] = None


class FusionSource(_Section):
    name: str
    kind: Literal["bm25", "impact", "dense", "run"]
    weight: float = Field(default=1.0, ge=0.0)
    normalization: Literal["minmax", "zscore", "none"] = "minmax"
    path: Optional[str] = None

    @model_validator(mode="after")
    def _check_path(self) -> "FusionSource":
        if self.kind == "run" and not self.path:
            raise ValueError(f"fusion source '{self.name}' of kind 'run' needs a path")
        return self


class FusionConfig(_Section):
    depth: int = Field(default=1000, ge=1)
    k: int = Field(default=1000, ge=1)
    sources: List[FusionSource] = Field(default_factory=lambda: [
        FusionSource(name="bm25", kind="bm25", weight=0.4),
        FusionSource(name="dense", kind="dense", weight=0.6),
    ])

    @model_validator(mode="after")
    def _check_sources(self) -> "FusionConfig":
        if not self.sources:
            raise ValueError("fusion needs at least one source")
        if all(s.weight == 0 for s in self.sources):
            raise ValueError("fusion weights must not all be zero")
        if len({s.name for s in self.sources}) != len(self.sources):
            raise ValueError("fusion source names must be unique")
        return self


class ScorerConfig(_Section):
    enabled: bool = True
    model_path: Optional[str] = None
    train: bool = True
    hidden: int = Field(default=16, ge=1)
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0)
    lr: float = Field(default=1e-3, gt=0.0)
    epochs: int = Field(default=10, ge=1)
    rdrop_alpha: float = Field(default=1.0, ge=0.0)
    n_neg: int = Field(default=7, ge=1)
    rel_threshold: int = Field(default=2, ge=0)
    seed: int = 42
    weight: float = Field(default=1.0, ge=0.0)


class ScoreFileSource(_Section):
    path: str
    weight: float = Field(default=1.0, ge=0.0)


class RankingConfig(_Section):
    candidates: int = Field(default=100, ge=1)
    scorer: ScorerConfig = Field(default_factory=ScorerConfig)
    score_files: List[ScoreFileSource] = Field(default_factory=list)
    interpolate_weight: Optional[float] = Field(default=None, ge=0.0, le=1.0)


class HlatrConfig(_Section):
    model_path: Optional[str] = None
    train: bool = True
    d_model: int = Field(default=64, ge=1)
    n_layers: int = Field(default=2, ge=0)
    n_heads: int = Field(default=2, ge=1)
    max_list_length: int = Field(default=100, ge=2)
    ff_width: int = Field(default=128, ge=1)
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0)
    lr: float = Field(default=1e-3, gt=0.0)
    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=16, ge=1)
    rdrop_alpha: float = Field(default=0.0, ge=0.0)
    rel_threshold: int = Field(default=2, ge=0)
    seed: int = 42

    @model_validator(mode="after")
    def _check_heads(self) -> "HlatrConfig":
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        return self


class EvalConfig(_Section):
    rel_threshold: int = Field(default=2, ge=0)
    ndcg_k: int = Field(default=10, ge=1)
    recall_k: int = Field(default=1000, ge=1)
    mrr_k: int = Field(default=100, ge=1)


class SynthConfig(_Section):
    n_docs: int = Field(default=1000, ge=1)
    n_queries: int = Field(default=20, ge=1)
    vocab: int = Field(default=5000, ge=10)
    seed: int = 42
    lexical_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    relevant_per_query: int = Field(default=4, ge=1)
    distractors_per_query: int = Field(default=10, ge=0)
    doc_length: int = Field(default=40, ge=4)


class PipelineStages(_Section):
    retrieval: bool = True
    ranking: bool = True
    hlatr: bool = True
    maxp: bool = False


class RuntimeConfig(_Section):
    seed: int = 42
    threads: int = Field(default=1, ge=1)
    output_dir: str = "runs"
    log_level: str = "INFO"


class PipelineConfig(_Section):
    """Full configuration; every section defaults to the documented values."""
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    sparse: SparseConfig = Field(default_factory=SparseConfig)
    impact: ImpactConfig = Field(default_factory=ImpactConfig)
    dense: DenseConfig = Field(default_factory=DenseConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    ranking: RankingConfig = Field(default_factory=RankingConfig)
    hlatr: HlatrConfig = Field(default_factory=HlatrConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    stages: PipelineStages = Field(default_factory=PipelineStages)
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)
