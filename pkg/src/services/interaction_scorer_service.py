# src/services/interaction_scorer_service.py
import logging
import math
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from ..models.candidate_models import CandidateList, ScoreTable
from ..models.config_models import ScorerConfig
from ..models.training_models import NUM_FEATURES, TrainingExample
from ..utils.errors import NonFiniteLossError
from ..utils.torch_utils import DTYPE, dropout_mask, init_linear_, seeded_generator

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
CHECKPOINT_FORMAT = "interaction-scorer"
CHECKPOINT_VERSION = 1


class InteractionScorer(nn.Module):
    """
    Two-layer perceptron over the pair features: W2 . relu(W1 f + b1) + b2.

    Parameter order in checkpoints: hidden_layer.weight (W1, H x F),
    hidden_layer.bias (b1), output_layer.weight (W2, 1 x H), output_layer.bias (b2).
    """

    def __init__(self, n_features: int = NUM_FEATURES, hidden: int = 16, dropout: float = 0.1):
        super().__init__()
        if hidden < 1:
            raise ValueError(f"hidden width must be >= 1, got {hidden}")
        self.n_features = n_features
        self.hidden = hidden
        self.dropout = dropout
        self.hidden_layer = nn.Linear(n_features, hidden, dtype=DTYPE)
        self.output_layer = nn.Linear(hidden, 1, dtype=DTYPE)

    def forward(self, features: torch.Tensor, hidden_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        hidden = F.relu(self.hidden_layer(features))
        if hidden_mask is not None:
            hidden = hidden * hidden_mask
        return self.output_layer(hidden).squeeze(-1)


def score(scorer: InteractionScorer, features, dropout_active: bool = False,
          generator: Optional[torch.Generator] = None) -> Union[float, np.ndarray]:
    """
    Logit(s) of one feature vector or a feature matrix.

    With `dropout_active` each hidden unit is dropped with the scorer's dropout
    rate (inverted dropout) using `generator`.
    """
    x = torch.as_tensor(np.asarray(features, dtype=np.float64))
    single = x.dim() == 1
    if single:
        x = x.unsqueeze(0)
    if x.shape[-1] != scorer.n_features:
        raise ValueError(f"expected {scorer.n_features} features, got {x.shape[-1]}")
    mask = None
    if dropout_active:
        mask = dropout_mask((x.shape[0], scorer.hidden), scorer.dropout, generator)
    with torch.no_grad():
        logits = scorer(x, mask)
    return float(logits[0]) if single else logits.numpy().copy()


def symmetric_kl(logits_a: torch.Tensor, logits_b: torch.Tensor) -> torch.Tensor:
    """0.5 * (KL(p||q) + KL(q||p)) between the softmax distributions of two logit vectors."""
    log_p = F.log_softmax(logits_a, dim=-1)
    log_q = F.log_softmax(logits_b, dim=-1)
    kl_pq = (log_p.exp() * (log_p - log_q)).sum(-1)
    kl_qp = (log_q.exp() * (log_q - log_p)).sum(-1)
    return 0.5 * (kl_pq + kl_qp)


def rdrop_loss(logits_a: torch.Tensor, logits_b: torch.Tensor, positive_index: int = 0,
               alpha: float = 1.0) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    R-Drop regularized list-wise loss of two dropout passes over one candidate list.

    Returns:
        (total, cross_entropy, symmetric_kl) with
        total = 0.5 * (CE(p1) + CE(p2)) + alpha * symmetric_kl.
    """
    ce = -0.5 * (F.log_softmax(logits_a, dim=-1)[positive_index] + F.log_softmax(logits_b, dim=-1)[positive_index])
    kl = symmetric_kl(logits_a, logits_b)
    return ce + alpha * kl, ce, kl


class InteractionScorerService:
    """
    Trains and applies the feature-based interaction scorer of the ranking stage.

    Training follows the list-wise recipe: softmax cross-entropy over the
    positive and its sampled negatives, regularized with R-Drop, optimized with
    Adam. All randomness (init, example order, dropout) comes from one seeded
    generator, so two runs with the same seed give identical parameters.
    """

    def __init__(self, config: Optional[ScorerConfig] = None):
        logger.info("InteractionScorerService initialized.")
        self.config = config or ScorerConfig()

    def init_model(self, generator: Optional[torch.Generator] = None) -> InteractionScorer:
        generator = generator or seeded_generator(self.config.seed)
        model = InteractionScorer(NUM_FEATURES, self.config.hidden, self.config.dropout)
        init_linear_(model.hidden_layer, generator)
        init_linear_(model.output_layer, generator)
        return model

    def train(self, examples: Sequence[TrainingExample],
              model: Optional[InteractionScorer] = None) -> InteractionScorer:
        if not examples:
            raise ValueError("cannot train the interaction scorer without examples")
        if any(e.features is None for e in examples):
            raise ValueError("every training example needs features")
        config = self.config
        generator = seeded_generator(config.seed)
        model = model or self.init_model(generator)
        model.dropout = config.dropout
        optimizer = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(0.9, 0.999), eps=1e-8)
        inputs = [torch.tensor(e.features, dtype=DTYPE) for e in examples]

        model.train()
        for epoch in tqdm(range(1, config.epochs + 1), desc="Scorer epochs", disable=None, leave=False):
            order = torch.randperm(len(inputs), generator=generator).tolist()
            total_loss = 0.0
            total_ce = 0.0
            for batch, i in enumerate(order, start=1):
                x = inputs[i]
                mask_a = dropout_mask((x.shape[0], model.hidden), config.dropout, generator)
                mask_b = dropout_mask((x.shape[0], model.hidden), config.dropout, generator)
                loss, ce, _ = rdrop_loss(model(x, mask_a), model(x, mask_b), 0, config.rdrop_alpha)
                if not torch.isfinite(loss):
                    raise NonFiniteLossError(epoch, batch, loss.item())
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total_loss += loss.item()
                total_ce += ce.item()
            logger.info(
                f"Scorer epoch {epoch}/{config.epochs}: mean loss {total_loss / len(inputs):.6f}, "
                f"mean CE {total_ce / len(inputs):.6f}"
            )
        model.eval()
        return model

    @staticmethod
    def mean_cross_entropy(model: InteractionScorer, examples: Sequence[TrainingExample]) -> float:
        """Mean list-wise cross-entropy without dropout."""
        with torch.no_grad():
            losses = [
                float(-F.log_softmax(model(torch.tensor(e.features, dtype=DTYPE)), dim=-1)[0])
                for e in examples
            ]
        return math.fsum(losses) / len(losses)

    @staticmethod
    def rescore(model: InteractionScorer, lists: Mapping[str, CandidateList],
                features: Mapping[str, Mapping[str, Sequence[float]]]) -> ScoreTable:
        """Scores every candidate of every list; pairs without features are left out."""
        table: ScoreTable = {}
        for query_id in sorted(lists):
            query_features = features.get(query_id, {})
            passage_ids = [pid for pid in lists[query_id].passage_ids if pid in query_features]
            if not passage_ids:
                table[query_id] = {}
                continue
            logits = score(model, [query_features[pid] for pid in passage_ids])
            table[query_id] = {pid: float(s) for pid, s in zip(passage_ids, logits)}
        return table

    @staticmethod
    def save_model(model: InteractionScorer, path: PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": {"n_features": model.n_features, "hidden": model.hidden, "dropout": model.dropout},
            "state_dict": model.state_dict(),
        }, path)
        logger.info(f"Saved interaction scorer to {path}.")

    @staticmethod
    def load_model(path: PathLike) -> InteractionScorer:
        checkpoint = torch.load(path, weights_only=True)
        if checkpoint.get("format") != CHECKPOINT_FORMAT or checkpoint.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path} is not a version {CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} checkpoint")
        model = InteractionScorer(**checkpoint["config"])
        model.load_state_dict(checkpoint["state_dict"])
        model.eval()
        return model
