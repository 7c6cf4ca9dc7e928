# tests/test_hlatr_service.py
import math
import random

import numpy as np
import pytest
import torch
from torch import nn
from torch.func import functional_call

from src.models.candidate_models import Candidate, CandidateList
from src.models.config_models import HlatrConfig
from src.models.corpus_models import Qrels
from src.models.training_models import RankedList
from src.services.hlatr_service import (
    HlatrService,
    _pad_batch,
    build_inputs,
    listwise_loss,
    to_ranked_list,
)
from src.utils.errors import FormatError
from src.utils.torch_utils import DTYPE, seeded_generator, uniform

TINY = dict(d_model=8, n_heads=2, ff_width=12, max_list_length=6)


def _perturbed_model(seed=0, **overrides):
    config = HlatrConfig(**{**TINY, "n_layers": 2, "seed": seed, **overrides})
    model = HlatrService(config).init_model()
    generator = seeded_generator(seed + 1)
    with torch.no_grad():
        for parameter in model.parameters():
            parameter.add_(uniform(tuple(parameter.shape), 0.3, generator))
    return model


def _ranking_list(query_id, rows):
    """rows: (passage_id, retrieval_rank, ranking_score) in stage-2 order."""
    return CandidateList(query_id=query_id, candidates=[
        Candidate(passage_id=pid, retrieval_score=1.0 / rank, retrieval_rank=rank,
                  source_tag="ranking", ranking_score=s)
        for pid, rank, s in rows
    ])


def _layer_norm(x, gain, bias, eps=1e-5):
    mean = sum(x) / len(x)
    var = sum((v - mean) ** 2 for v in x) / len(x)
    return [(v - mean) / math.sqrt(var + eps) * g + b for v, g, b in zip(x, gain, bias)]


def _affine(weight, bias, x):
    return [sum(w * v for w, v in zip(row, x)) + b for row, b in zip(weight, bias)]


def _oracle_scores(model, ranks, scores):
    """Position-by-position re-computation of the forward pass with plain floats."""
    p = {name: value.detach().numpy().tolist() for name, value in model.state_dict().items()}
    config = model.config
    head_dim = config.d_model // config.n_heads
    proj_w = [row[0] for row in p["score_projection.weight"]]
    xs = [
        [pe + w * s + b for pe, w, b in zip(p["position_embedding.weight"][min(r, config.max_list_length) - 1],
                                              proj_w, p["score_projection.bias"])]
        for r, s in zip(ranks, scores)
    ]
    for layer in range(config.n_layers):
        def w(name):
            return p[f"layers.{layer}.{name}"]

        hs = [_layer_norm(x, w("attention_norm.weight"), w("attention_norm.bias")) for x in xs]
        qs = [_affine(w("query_projection.weight"), w("query_projection.bias"), h) for h in hs]
        ks = [_affine(w("key_projection.weight"), w("key_projection.bias"), h) for h in hs]
        vs = [_affine(w("value_projection.weight"), w("value_projection.bias"), h) for h in hs]
        new_xs = []
        for i, x in enumerate(xs):
            context = []
            for head in range(config.n_heads):
                lo, hi = head * head_dim, (head + 1) * head_dim
                logits = [sum(a * b for a, b in zip(qs[i][lo:hi], k[lo:hi])) / math.sqrt(head_dim) for k in ks]
                top = max(logits)
                weights = [math.exp(v - top) for v in logits]
                total = sum(weights)
                context.extend(
                    sum(weights[j] / total * vs[j][d] for j in range(len(xs))) for d in range(lo, hi)
                )
            attended = _affine(w("output_projection.weight"), w("output_projection.bias"), context)
            new_xs.append([a + b for a, b in zip(x, attended)])
        xs = []
        for x in new_xs:
            h = _layer_norm(x, w("feedforward_norm.weight"), w("feedforward_norm.bias"))
            inner = [max(0.0, v) for v in _affine(w("feedforward_in.weight"), w("feedforward_in.bias"), h)]
            out = _affine(w("feedforward_out.weight"), w("feedforward_out.bias"), inner)
            xs.append([a + b for a, b in zip(x, out)])
    return [_affine(p["scoring_head.weight"], p["scoring_head.bias"], x)[0] for x in xs]


def test_uniform_scores_cost_log_n():
    assert float(listwise_loss(torch.zeros(4, dtype=DTYPE), 2)) == pytest.approx(math.log(4), abs=1e-15)


def test_hand_computed_loss():
    loss = float(listwise_loss(torch.tensor([2.0, 1.0, 0.0], dtype=DTYPE), 0))
    assert loss == pytest.approx(0.40761, abs=1e-5)


def test_loss_is_shift_invariant():
    scores = torch.tensor([0.3, -1.2, 2.5, 0.0], dtype=DTYPE)
    assert float(listwise_loss(scores + 17.0, 1)) == pytest.approx(float(listwise_loss(scores, 1)), abs=1e-12)


def test_masked_loss_ignores_padding():
    scores = torch.tensor([[2.0, 1.0, 0.0, 50.0]], dtype=DTYPE)
    mask = torch.tensor([[True, True, True, False]])
    loss = listwise_loss(scores, torch.tensor([0]), mask)
    assert float(loss[0]) == pytest.approx(float(listwise_loss(scores[0, :3], 0)), abs=1e-15)


def test_attention_rows_are_distributions():
    model = _perturbed_model()
    inputs = build_inputs(RankedList(query_id="q", passage_ids=list("abcd"), retrieval_ranks=[2, 1, 4, 3],
                                     ranking_scores=[1.0, 0.6, 0.2, 0.0]), model)
    _, attentions = model(inputs, return_attention=True)
    assert len(attentions) == 2
    for attention in attentions:
        assert attention.shape == (1, 2, 4, 4)
        assert torch.allclose(attention.sum(-1), torch.ones((1, 2, 4), dtype=DTYPE), atol=1e-12)


def test_forward_matches_scalar_oracle():
    model = _perturbed_model(seed=3)
    ranks, scores = [3, 1, 7, 2, 6], [0.9, 1.0, 0.1, 0.5, 0.0]
    ranked = RankedList(query_id="q", passage_ids=list("abcde"), retrieval_ranks=ranks, ranking_scores=scores)
    actual = HlatrService.score_list(model, ranked)
    expected = _oracle_scores(model, ranks, scores)
    assert actual == pytest.approx(expected, abs=1e-9)


class _LossWrapper(nn.Module):
    def __init__(self, model):
        super().__init__()
        self.model = model

    def forward(self, ranks, scores, mask, positives):
        inputs = self.model.build_inputs(ranks, scores)
        return listwise_loss(self.model(inputs, mask), positives, mask).mean()


def test_gradients_match_finite_differences():
    for instance in range(5):
        model = _perturbed_model(seed=20 + instance, d_model=4, ff_width=6, max_list_length=5)
        assert model.config.n_layers == 2
        rng = random.Random(instance)
        lists = [
            RankedList(query_id="a", passage_ids=list("xyz"), retrieval_ranks=rng.sample(range(1, 4), 3),
                       ranking_scores=[rng.random() for _ in range(3)], positive_index=rng.randrange(3)),
            RankedList(query_id="b", passage_ids=list("wxyz"), retrieval_ranks=rng.sample(range(1, 5), 4),
                       ranking_scores=[rng.random() for _ in range(4)], positive_index=rng.randrange(4)),
        ]
        wrapper = _LossWrapper(model)
        batch = _pad_batch(lists)
        names = [f"model.{name}" for name, _ in model.named_parameters()]

        def loss(*params):
            return functional_call(wrapper, dict(zip(names, params)), batch)

        params = tuple(p.detach().clone().requires_grad_(True) for p in model.parameters())
        assert torch.autograd.gradcheck(loss, params, eps=1e-6, atol=1e-5)


def test_batch_loss_does_not_depend_on_batch_layout():
    service = HlatrService(HlatrConfig(**TINY, n_layers=1, seed=2))
    model = service.init_model()
    short = RankedList(query_id="a", passage_ids=list("xy"), retrieval_ranks=[2, 1],
                       ranking_scores=[1.0, 0.0], positive_index=1)
    long = RankedList(query_id="b", passage_ids=list("stuvw"), retrieval_ranks=[5, 1, 2, 3, 4],
                      ranking_scores=[1.0, 0.8, 0.6, 0.1, 0.0], positive_index=2)
    with torch.no_grad():
        together = float(service.batch_loss(model, [short, long]))
        apart = 0.5 * (float(service.batch_loss(model, [short])) + float(service.batch_loss(model, [long])))
        reversed_batch = float(service.batch_loss(model, [long, short]))
    assert together == pytest.approx(apart, abs=1e-12)
    assert together == pytest.approx(reversed_batch, abs=1e-12)


def test_zero_model_keeps_ranking_order():
    service = HlatrService(HlatrConfig(**TINY, n_layers=1))
    lists = {"q": _ranking_list("q", [("c", 3, 0.9), ("a", 1, 0.5), ("b", 2, 0.1)])}
    reranked = service.rerank(service.zero_model(), lists)["q"]
    assert reranked.passage_ids == ["c", "a", "b"]
    assert [c.hlatr_score for c in reranked.candidates] == [0.0, 0.0, 0.0]
    assert all(c.source_tag == "hlatr" for c in reranked.candidates)


def test_single_candidate_list_passes_through():
    service = HlatrService(HlatrConfig(**TINY, n_layers=1))
    single = _ranking_list("q", [("a", 1, 0.5)])
    assert service.rerank(_perturbed_model(), {"q": single})["q"] == single


def test_tail_beyond_max_length_follows_unchanged():
    service = HlatrService(HlatrConfig(**TINY, n_layers=1))
    rows = [(f"p{i}", i, 1.0 - i / 10) for i in range(1, 9)]
    reranked = service.rerank(_perturbed_model(), {"q": _ranking_list("q", rows)})["q"]
    assert sorted(reranked.passage_ids[:6]) == [f"p{i}" for i in range(1, 7)]
    assert reranked.passage_ids[6:] == ["p7", "p8"]
    assert all(c.hlatr_score is None for c in reranked.candidates[6:])


def test_encoder_free_model_is_affine_in_score():
    model = _perturbed_model(seed=4, n_layers=0)
    values = [HlatrService.score_list(model, RankedList(
        query_id="q", passage_ids=["a", "b"], retrieval_ranks=[2, 2], ranking_scores=[s, 0.0]))[0]
        for s in (0.0, 0.5, 1.0)]
    assert values[1] - values[0] == pytest.approx(values[2] - values[1], abs=1e-12)


def test_build_inputs_rejects_long_lists():
    model = _perturbed_model()
    too_long = RankedList(query_id="q", passage_ids=[str(i) for i in range(7)],
                          retrieval_ranks=list(range(1, 8)), ranking_scores=[0.0] * 7)
    with pytest.raises(ValueError, match="max_list_length"):
        build_inputs(too_long, model)


def test_to_ranked_list_normalizes_and_finds_positive():
    candidate_list = _ranking_list("q", [("a", 2, 4.0), ("b", 3, 3.0), ("c", 1, 2.0), ("d", 4, 0.0)])
    qrels = Qrels(judgments={"q": {"c": 2, "b": 1}})
    ranked = to_ranked_list(candidate_list, 3, qrels)
    assert ranked.passage_ids == ["a", "b", "c"]
    assert ranked.retrieval_ranks == [2, 3, 1]
    assert ranked.ranking_scores == [1.0, 0.5, 0.0]
    assert ranked.positive_id == "c"
    assert to_ranked_list(candidate_list, 2, qrels).positive_index is None


def test_training_lists_need_positives():
    service = HlatrService(HlatrConfig(**TINY, n_layers=1))
    unlabeled = RankedList(query_id="q", passage_ids=["a", "b"], retrieval_ranks=[1, 2], ranking_scores=[1.0, 0.0])
    with pytest.raises(ValueError, match="no positive"):
        service.train([unlabeled])
    lonely = RankedList(query_id="q", passage_ids=["a"], retrieval_ranks=[1], ranking_scores=[1.0],
                        positive_index=0)
    with pytest.raises(ValueError, match="usable"):
        service.train([lonely])


def _synthetic_lists(n_lists, seed):
    rng = random.Random(seed)
    lists, judgments = {}, {}
    for i in range(n_lists):
        query_id = f"q{i}"
        n = rng.randint(8, 12)
        ranks = rng.sample(range(1, n + 1), n)
        rows = [(f"{query_id}-p0", ranks[0], 1.0)]
        rows += [(f"{query_id}-p{j}", ranks[j], rng.uniform(0.0, 0.7)) for j in range(1, n)]
        rows.sort(key=lambda row: -row[2])
        lists[query_id] = _ranking_list(query_id, rows)
        judgments[query_id] = {f"{query_id}-p0": 2}
    return lists, Qrels(judgments=judgments)


def _reciprocal_rank(candidate_list):
    return 1.0 / (candidate_list.passage_ids.index(f"{candidate_list.query_id}-p0") + 1)


def test_training_learns_to_promote_the_strongest_score():
    config = HlatrConfig(d_model=64, n_layers=2, n_heads=2, ff_width=128, max_list_length=12,
                         epochs=30, batch_size=16, lr=3e-3, seed=1)
    service = HlatrService(config)
    train_lists, train_qrels = _synthetic_lists(500, seed=0)
    model = service.train([to_ranked_list(cl, config.max_list_length, train_qrels) for cl in train_lists.values()])

    eval_lists, _ = _synthetic_lists(100, seed=99)
    reranked = service.rerank(model, eval_lists)
    mrr = sum(_reciprocal_rank(cl) for cl in reranked.values()) / len(reranked)
    assert mrr >= 0.95

    flipped = {qid: CandidateList(query_id=qid, candidates=list(reversed(cl.candidates)))
               for qid, cl in eval_lists.items()}

    def ndcg(lists):
        return sum(1.0 / math.log2(cl.passage_ids.index(f"{qid}-p0") + 2) for qid, cl in lists.items()) / len(lists)

    assert ndcg(service.rerank(model, flipped)) - ndcg(flipped) >= 0.05


def test_training_is_deterministic(recwarn):
    config = HlatrConfig(**TINY, n_layers=1, epochs=2, batch_size=4, rdrop_alpha=0.5, seed=6)
    lists, qrels = _synthetic_lists(12, seed=3)
    ranked = [to_ranked_list(cl, config.max_list_length, qrels) for cl in lists.values()]
    ranked = [rl for rl in ranked if rl.positive_index is not None]
    first = HlatrService(config).train(ranked).state_dict()
    second = HlatrService(config).train(ranked).state_dict()
    assert all(torch.equal(first[k], second[k]) for k in first)
    assert not [w for w in recwarn if "requires_grad" in str(w.message)]


def test_checkpoint_round_trip(tmp_path):
    model = _perturbed_model(seed=8)
    path = tmp_path / "hlatr.pt"
    HlatrService.save_model(model, path)
    loaded = HlatrService.load_model(path)
    assert loaded.config == model.config
    ranked = RankedList(query_id="q", passage_ids=list("abc"), retrieval_ranks=[3, 1, 2],
                        ranking_scores=[1.0, 0.3, 0.0])
    assert HlatrService.score_list(loaded, ranked) == HlatrService.score_list(model, ranked)

    torch.save({"format": "hlatr", "version": 99}, tmp_path / "future.pt")
    with pytest.raises(ValueError):
        HlatrService.load_model(tmp_path / "future.pt")


def test_training_list_file_round_trip(tmp_path):
    lists = [
        RankedList(query_id="q1", passage_ids=["a", "b"], retrieval_ranks=[2, 1],
                   ranking_scores=[1.0, 0.0], positive_index=1),
        RankedList(query_id="q2", passage_ids=["c", "d", "e"], retrieval_ranks=[1, 3, 2],
                   ranking_scores=[1.0, 0.25, 0.0]),
    ]
    path = tmp_path / "lists.jsonl"
    HlatrService.write_training_lists(lists, path)
    assert HlatrService.read_training_lists(path) == lists

    path.write_text('{"query_id": "q", "candidates": ["a"], "ranking_scores": [1.0]}\n')
    with pytest.raises(FormatError, match="retrieval_ranks"):
        HlatrService.read_training_lists(path)


def test_rerank_is_thread_independent():
    model = _perturbed_model(seed=9, max_list_length=12)
    service = HlatrService(model.config)
    lists, _ = _synthetic_lists(20, seed=4)
    assert service.rerank(model, lists, threads=1) == service.rerank(model, lists, threads=4)


def test_batched_forward_matches_single_lists():
    model = _perturbed_model(seed=10)
    lists = [
        RankedList(query_id="a", passage_ids=list("xy"), retrieval_ranks=[1, 2], ranking_scores=[1.0, 0.0]),
        RankedList(query_id="b", passage_ids=list("uvwx"), retrieval_ranks=[3, 4, 1, 2],
                   ranking_scores=[1.0, 0.5, 0.2, 0.0]),
    ]
    ranks, scores, mask, _ = _pad_batch(lists)
    with torch.no_grad():
        batched = model(model.build_inputs(ranks, scores), mask)
    for row, rl in enumerate(lists):
        single = HlatrService.score_list(model, rl)
        assert np.allclose(batched[row, :len(rl)].numpy(), single, atol=1e-12)
