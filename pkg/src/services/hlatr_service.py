# src/services/hlatr_service.py
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from ..models.candidate_models import CandidateList
from ..models.config_models import HlatrConfig
from ..models.corpus_models import Qrels
from ..models.training_models import RankedList
from ..utils.concurrency import map_in_order
from ..utils.errors import FormatError, NonFiniteLossError
from ..utils.torch_utils import (
    DTYPE,
    apply_dropout,
    init_linear_,
    seeded_generator,
    uniform,
    zero_parameters_,
)
from ..utils.trec_io import iter_jsonl
from .interaction_scorer_service import symmetric_kl
from .score_fusion_service import normalize_values

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
CHECKPOINT_FORMAT = "hlatr"
CHECKPOINT_VERSION = 1
# Finite stand-in for -inf on padded positions: exp() underflows to exactly 0
# while differences of two masked log-probabilities stay 0 instead of NaN.
MASK_FILL = -1e30


class HlatrEncoderLayer(nn.Module):
    """Pre-norm encoder layer: x += Attn(LN(x)); x += FF(LN(x))."""

    def __init__(self, d_model: int, n_heads: int, ff_width: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.attention_norm = nn.LayerNorm(d_model, dtype=DTYPE)
        self.query_projection = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.key_projection = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.value_projection = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.output_projection = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.feedforward_norm = nn.LayerNorm(d_model, dtype=DTYPE)
        self.feedforward_in = nn.Linear(d_model, ff_width, dtype=DTYPE)
        self.feedforward_out = nn.Linear(ff_width, d_model, dtype=DTYPE)

    def _split_heads(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, _ = x.shape
        return x.view(batch, length, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, x: torch.Tensor, key_mask: Optional[torch.Tensor] = None, dropout: float = 0.0,
                generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        h = self.attention_norm(x)
        q = self._split_heads(self.query_projection(h))
        k = self._split_heads(self.key_projection(h))
        v = self._split_heads(self.value_projection(h))
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if key_mask is not None:
            logits = logits.masked_fill(~key_mask[:, None, None, :], MASK_FILL)
        attention = torch.softmax(logits, dim=-1)
        context = (attention @ v).transpose(1, 2).reshape(x.shape)
        x = x + apply_dropout(self.output_projection(context), dropout, generator)

        h = self.feedforward_norm(x)
        x = x + apply_dropout(self.feedforward_out(F.relu(self.feedforward_in(h))), dropout, generator)
        return x, attention


class HlatrModel(nn.Module):
    """
    List-wise transformer re-ranker over (retrieval rank, ranking score) features.

    Each candidate enters as PE[retrieval_rank - 1] + w_proj * s + b_proj, where
    s is its per-list normalized ranking score; after the encoder layers a
    linear head scores every position. Parameters, in checkpoint order:
    position_embedding, score_projection, layers.*, scoring_head.
    """

    def __init__(self, config: HlatrConfig):
        super().__init__()
        if config.d_model % config.n_heads != 0:
            raise ValueError(f"d_model {config.d_model} is not divisible by n_heads {config.n_heads}")
        self.config = config
        self.max_list_length = config.max_list_length
        self.position_embedding = nn.Embedding(config.max_list_length, config.d_model, dtype=DTYPE)
        self.score_projection = nn.Linear(1, config.d_model, dtype=DTYPE)
        self.layers = nn.ModuleList([
            HlatrEncoderLayer(config.d_model, config.n_heads, config.ff_width) for _ in range(config.n_layers)
        ])
        self.scoring_head = nn.Linear(config.d_model, 1, dtype=DTYPE)

    def build_inputs(self, retrieval_ranks: torch.Tensor, ranking_scores: torch.Tensor) -> torch.Tensor:
        """Ranks beyond the position table share its last row."""
        positions = retrieval_ranks.clamp(max=self.max_list_length) - 1
        return self.position_embedding(positions) + self.score_projection(ranking_scores.unsqueeze(-1))

    def forward(self, inputs: torch.Tensor, key_mask: Optional[torch.Tensor] = None,
                generator: Optional[torch.Generator] = None,
                return_attention: bool = False):
        """
        Scores every position of one list (n x d) or a padded batch (B x n x d).

        Dropout is applied only when a generator is passed (training).
        """
        unbatched = inputs.dim() == 2
        x = inputs.unsqueeze(0) if unbatched else inputs
        if key_mask is not None and unbatched:
            key_mask = key_mask.unsqueeze(0)
        dropout = self.config.dropout if generator is not None else 0.0
        attentions = []
        for layer in self.layers:
            x, attention = layer(x, key_mask, dropout, generator)
            attentions.append(attention)
        scores = self.scoring_head(x).squeeze(-1)
        if unbatched:
            scores = scores.squeeze(0)
        return (scores, attentions) if return_attention else scores


def build_inputs(ranked_list: RankedList, model: HlatrModel) -> torch.Tensor:
    """Input vectors of one ranked list; the list must fit the position table."""
    if len(ranked_list) > model.max_list_length:
        raise ValueError(
            f"list of query '{ranked_list.query_id}' has {len(ranked_list)} candidates, "
            f"more than max_list_length {model.max_list_length}"
        )
    ranks = torch.tensor(ranked_list.retrieval_ranks, dtype=torch.long)
    scores = torch.tensor(ranked_list.ranking_scores, dtype=DTYPE)
    return model.build_inputs(ranks, scores)


def listwise_loss(scores: torch.Tensor, positive_index: Union[int, torch.Tensor],
                  key_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """-log softmax(scores)[positive]; batched when scores is B x n (then one loss per list)."""
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask, MASK_FILL)
    log_probs = F.log_softmax(scores, dim=-1)
    if log_probs.dim() == 1:
        return -log_probs[positive_index]
    return -log_probs.gather(-1, positive_index.view(-1, 1)).squeeze(-1)


def to_ranked_list(candidate_list: CandidateList, max_length: int, qrels: Optional[Qrels] = None,
                   rel_threshold: int = 2) -> RankedList:
    """
    The re-ranker's view of a ranking-stage list: its first `max_length`
    candidates in stage-2 order, ranking scores minmax-normalized over them.
    With qrels, the highest-placed relevant candidate becomes the positive.
    """
    head = candidate_list.candidates[:max_length]
    raw_scores = [c.ranking_score if c.ranking_score is not None else c.retrieval_score for c in head]
    scores = normalize_values(raw_scores, "minmax") if head else []
    positive_index = None
    if qrels is not None:
        for i, candidate in enumerate(head):
            grade = qrels.passage_grade(candidate_list.query_id, candidate.passage_id)
            if grade is not None and grade >= rel_threshold:
                positive_index = i
                break
    return RankedList(
        query_id=candidate_list.query_id,
        passage_ids=[c.passage_id for c in head],
        retrieval_ranks=[c.retrieval_rank for c in head],
        ranking_scores=scores,
        positive_index=positive_index,
    )


def _pad_batch(lists: Sequence[RankedList]):
    width = max(len(rl) for rl in lists)
    ranks = torch.ones((len(lists), width), dtype=torch.long)
    scores = torch.zeros((len(lists), width), dtype=DTYPE)
    mask = torch.zeros((len(lists), width), dtype=torch.bool)
    for row, rl in enumerate(lists):
        n = len(rl)
        ranks[row, :n] = torch.tensor(rl.retrieval_ranks, dtype=torch.long)
        scores[row, :n] = torch.tensor(rl.ranking_scores, dtype=DTYPE)
        mask[row, :n] = True
    positives = torch.tensor([rl.positive_index or 0 for rl in lists], dtype=torch.long)
    return ranks, scores, mask, positives


class HlatrService:
    """
    Trains the list-wise re-ranker and applies it to ranking-stage outputs.

    Training minimizes the mean list-wise softmax cross-entropy of padded
    batches with Adam; an optional R-Drop term adds the symmetric KL between
    two dropout passes. Everything random comes from one seeded generator.
    """

    def __init__(self, config: Optional[HlatrConfig] = None):
        logger.info("HlatrService initialized.")
        self.config = config or HlatrConfig()

    def init_model(self, generator: Optional[torch.Generator] = None) -> HlatrModel:
        """Scaled-uniform init; layer norms start as identity (gain 1, bias 0)."""
        generator = generator or seeded_generator(self.config.seed)
        model = HlatrModel(self.config)
        with torch.no_grad():
            model.position_embedding.weight.copy_(
                uniform(tuple(model.position_embedding.weight.shape), 1.0 / math.sqrt(self.config.d_model), generator)
            )
        for module in model.modules():
            if isinstance(module, nn.Linear):
                init_linear_(module, generator)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        return model

    def zero_model(self) -> HlatrModel:
        """All parameters zero: every candidate gets the same score."""
        model = HlatrModel(self.config)
        zero_parameters_(model.parameters())
        model.eval()
        return model

    def _usable_lists(self, lists: Sequence[RankedList]) -> List[RankedList]:
        usable = []
        for rl in lists:
            if rl.positive_index is None:
                raise ValueError(f"training list of query '{rl.query_id}' has no positive")
            if len(rl) > self.config.max_list_length:
                rl = RankedList(
                    query_id=rl.query_id,
                    passage_ids=rl.passage_ids[:self.config.max_list_length],
                    retrieval_ranks=rl.retrieval_ranks[:self.config.max_list_length],
                    ranking_scores=rl.ranking_scores[:self.config.max_list_length],
                    positive_index=rl.positive_index if rl.positive_index < self.config.max_list_length else None,
                )
                if rl.positive_index is None:
                    continue
            if len(rl) >= 2:
                usable.append(rl)
        if len(usable) < len(lists):
            logger.warning(f"Dropped {len(lists) - len(usable)} training lists (too short or positive truncated).")
        return usable

    def batch_loss(self, model: HlatrModel, lists: Sequence[RankedList],
                   generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """Mean list-wise loss of one batch (plus the R-Drop term when configured and training)."""
        ranks, scores, mask, positives = _pad_batch(lists)
        inputs = model.build_inputs(ranks, scores)
        logits_a = model(inputs, mask, generator)
        losses_a = listwise_loss(logits_a, positives, mask)
        if self.config.rdrop_alpha == 0.0 or generator is None:
            return losses_a.mean()
        logits_b = model(inputs, mask, generator)
        losses_b = listwise_loss(logits_b, positives, mask)
        kl = symmetric_kl(logits_a.masked_fill(~mask, MASK_FILL), logits_b.masked_fill(~mask, MASK_FILL))
        return (0.5 * (losses_a + losses_b) + self.config.rdrop_alpha * kl).mean()

    def train(self, lists: Sequence[RankedList], model: Optional[HlatrModel] = None) -> HlatrModel:
        lists = self._usable_lists(lists)
        if not lists:
            raise ValueError("no usable HLATR training lists")
        config = self.config
        generator = seeded_generator(config.seed)
        model = model or self.init_model(generator)
        optimizer = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(0.9, 0.999), eps=1e-8)
        dropout_generator = generator if config.dropout > 0.0 else None

        model.train()
        for epoch in tqdm(range(1, config.epochs + 1), desc="HLATR epochs", disable=None, leave=False):
            order = torch.randperm(len(lists), generator=generator).tolist()
            epoch_losses = []
            for batch, start in enumerate(range(0, len(order), config.batch_size), start=1):
                batch_lists = [lists[i] for i in order[start:start + config.batch_size]]
                loss = self.batch_loss(model, batch_lists, dropout_generator)
                if not torch.isfinite(loss):
                    raise NonFiniteLossError(epoch, batch, loss.item())
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_losses.append(loss.item())
            logger.info(f"HLATR epoch {epoch}/{config.epochs}: mean loss {math.fsum(epoch_losses) / len(epoch_losses):.6f}")
        model.eval()
        return model

    @staticmethod
    def score_list(model: HlatrModel, ranked_list: RankedList) -> List[float]:
        with torch.no_grad():
            return model(build_inputs(ranked_list, model)).tolist()

    def rerank(self, model: HlatrModel, lists: Mapping[str, CandidateList],
               threads: int = 1) -> Dict[str, CandidateList]:
        """
        Reorders the first max_list_length candidates of each ranking-stage list
        by HLATR score (ties keep their stage-2 order); the rest follow unchanged.
        """
        query_ids = sorted(lists)
        reranked = map_in_order(lambda qid: self._rerank_one(model, lists[qid]), query_ids, threads, desc="HLATR")
        return dict(zip(query_ids, reranked))

    def _rerank_one(self, model: HlatrModel, candidate_list: CandidateList) -> CandidateList:
        if len(candidate_list) < 2:
            logger.warning(f"Query '{candidate_list.query_id}' has fewer than 2 candidates; passed through.")
            return candidate_list
        ranked_list = to_ranked_list(candidate_list, model.max_list_length)
        scores = self.score_list(model, ranked_list)
        head = candidate_list.candidates[:len(scores)]
        order = sorted(range(len(head)), key=lambda i: (-scores[i], i))
        reordered = [head[i].model_copy(update={"hlatr_score": scores[i], "source_tag": "hlatr"}) for i in order]
        reordered.extend(c.model_copy(update={"source_tag": "hlatr"}) for c in candidate_list.candidates[len(scores):])
        return CandidateList(query_id=candidate_list.query_id, candidates=reordered)

    @staticmethod
    def save_model(model: HlatrModel, path: PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": model.config.model_dump(),
            "state_dict": model.state_dict(),
        }, path)
        logger.info(f"Saved HLATR model to {path}.")

    @staticmethod
    def load_model(path: PathLike) -> HlatrModel:
        checkpoint = torch.load(path, weights_only=True)
        if checkpoint.get("format") != CHECKPOINT_FORMAT or checkpoint.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path} is not a version {CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} checkpoint")
        model = HlatrModel(HlatrConfig.model_validate(checkpoint["config"]))
        model.load_state_dict(checkpoint["state_dict"])
        model.eval()
        return model

    @staticmethod
    def write_training_lists(lists: Sequence[RankedList], path: PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            for rl in lists:
                f.write(json.dumps({
                    "query_id": rl.query_id,
                    "candidates": rl.passage_ids,
                    "retrieval_ranks": rl.retrieval_ranks,
                    "ranking_scores": rl.ranking_scores,
                    "positive_id": rl.positive_id,
                }) + "\n")

    @staticmethod
    def read_training_lists(path: PathLike) -> List[RankedList]:
        lists = []
        for line_number, record in iter_jsonl(path):
            try:
                passage_ids = [str(pid) for pid in record["candidates"]]
                positive_id = record.get("positive_id")
                lists.append(RankedList(
                    query_id=str(record["query_id"]),
                    passage_ids=passage_ids,
                    retrieval_ranks=record["retrieval_ranks"],
                    ranking_scores=record["ranking_scores"],
                    positive_index=passage_ids.index(positive_id) if positive_id is not None else None,
                ))
            except KeyError as e:
                raise FormatError(path, line_number, f"missing field {e}")
            except ValueError as e:
                raise FormatError(path, line_number, str(e))
        return lists
