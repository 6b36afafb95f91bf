"""Reward mathematics: pairwise ranking loss and the learned quality scorer,
the order-preserving alignment reward, composition, and the KL-penalised
final reward."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .core import PreferencePair

DTYPE = torch.float64


@dataclass
class RewardConfig:
    alpha: float = 0.4
    beta: float = 0.005
    normalize_alignment: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")


@dataclass(frozen=True)
class BatchRewards:
    quality: np.ndarray
    alignment: np.ndarray
    overall: np.ndarray

    def __post_init__(self):
        if not (len(self.quality) == len(self.alignment) == len(self.overall)):
            raise ValueError("reward vectors must share the batch length")


# ---------------------------------------------------------------------------
# Quality reward model


def pad_sequences(seqs: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad token sequences; returns (ids, float mask)."""
    lengths = np.fromiter((len(s) for s in seqs), dtype=np.int64, count=len(seqs))
    if np.any(lengths == 0):
        raise ValueError("token sequences must be non-empty")
    width = int(lengths.max())
    mask = np.arange(width)[None, :] < lengths[:, None]
    ids = np.zeros((len(seqs), width), dtype=np.int64)
    if np.all(lengths == width):
        ids[:] = seqs
    else:
        ids[mask] = np.fromiter((t for s in seqs for t in s), dtype=np.int64, count=int(lengths.sum()))
    return torch.from_numpy(ids), torch.from_numpy(mask.astype(np.float64))


class QualityRewardModel(nn.Module):
    """Mean-pooled prompt and response embeddings -> 2-layer perceptron -> scalar."""

    def __init__(self, vocab_size: int, feature_dim: int = 16, hidden_dim: int = 64, seed: int = 0):
        super().__init__()
        if vocab_size <= 0 or feature_dim <= 0 or hidden_dim <= 0:
            raise ValueError("sizes must be positive")
        self.vocab_size = vocab_size
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        gen = torch.Generator().manual_seed(seed)
        self.embedding = nn.Parameter(torch.randn(vocab_size, feature_dim, generator=gen, dtype=DTYPE) * 0.5)
        self.hidden = nn.Linear(2 * feature_dim, hidden_dim, dtype=DTYPE)
        self.out = nn.Linear(hidden_dim, 1, dtype=DTYPE)
        with torch.no_grad():
            for layer in (self.hidden, self.out):
                bound = 1.0 / math.sqrt(layer.in_features)
                layer.weight.uniform_(-bound, bound, generator=gen)
                layer.bias.uniform_(-bound, bound, generator=gen)

    def _pool(self, ids, mask):
        emb = self.embedding[ids] * mask.unsqueeze(-1)
        return emb.sum(1) / mask.sum(1, keepdim=True)

    def forward(self, prompt_ids, prompt_mask, response_ids, response_mask) -> torch.Tensor:
        feats = torch.cat([self._pool(prompt_ids, prompt_mask), self._pool(response_ids, response_mask)], -1)
        return self.out(torch.tanh(self.hidden(feats))).squeeze(-1)

    def score_batch(self, prompts: Sequence[Sequence[int]], responses: Sequence[Sequence[int]]) -> torch.Tensor:
        return self(*pad_sequences(prompts), *pad_sequences(responses))

    def parameter_vector(self) -> torch.Tensor:
        return nn.utils.parameters_to_vector(self.parameters())

    def load_parameter_vector(self, vec) -> None:
        nn.utils.vector_to_parameters(torch.as_tensor(vec, dtype=DTYPE), self.parameters())


def quality_score(model: QualityRewardModel, prompt: Sequence[int], response: Sequence[int]) -> float:
    if len(prompt) == 0 or len(response) == 0:
        raise ValueError("prompt and response must be non-empty")
    with torch.no_grad():
        return float(model.score_batch([prompt], [response])[0])


def ranking_loss_from_margin(margin):
    """-log(sigmoid(d)) computed as softplus(-d); works on floats, arrays and tensors."""
    if isinstance(margin, torch.Tensor):
        # torch softplus switches to the identity above 20 and drops up to e^-20
        return torch.logaddexp(torch.zeros_like(margin), -margin)
    return np.logaddexp(0.0, -np.asarray(margin, dtype=float))


def pair_scores(model: QualityRewardModel, pairs: Sequence[PreferencePair]) -> tuple[torch.Tensor, torch.Tensor]:
    prompts = [p.prompt_tokens for p in pairs]
    chosen = model.score_batch(prompts, [p.chosen_tokens for p in pairs])
    rejected = model.score_batch(prompts, [p.rejected_tokens for p in pairs])
    return chosen, rejected


def pair_margins(model: QualityRewardModel, pairs: Sequence[PreferencePair]) -> torch.Tensor:
    chosen, rejected = pair_scores(model, pairs)
    return chosen - rejected


def ranking_loss(model: QualityRewardModel, pair: PreferencePair) -> torch.Tensor:
    """Binary ranking loss for one pair; differentiable in the model parameters."""
    return ranking_loss_from_margin(pair_margins(model, [pair]))[0]


def ranking_accuracy(model: QualityRewardModel, pairs: Sequence[PreferencePair]) -> float:
    if not pairs:
        raise ValueError("no pairs to evaluate")
    with torch.no_grad():
        return float((pair_margins(model, pairs) > 0).double().mean())


@dataclass
class RMTrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 0.1
    feature_dim: int = 16
    hidden_dim: int = 64
    holdout_fraction: float = 0.2
    seed: int = 0
    vocab_size: Optional[int] = None
    # weight on mean (r_chosen + r_rejected)^2; pins each context's score level
    # near zero so scores are comparable across prompts
    center_coeff: float = 0.0


@dataclass
class RMTrainResult:
    model: QualityRewardModel
    heldout_accuracy: float
    train_accuracy: float
    epoch_losses: list = field(default_factory=list)


def train_quality_rm(pairs: Sequence[PreferencePair], cfg: RMTrainConfig = RMTrainConfig()) -> RMTrainResult:
    """AdamW on the ranking loss with a held-out split for reporting accuracy."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("cannot train a reward model on an empty dataset")
    vocab = cfg.vocab_size or 1 + max(
        max(max(p.prompt_tokens), max(p.chosen_tokens), max(p.rejected_tokens)) for p in pairs
    )
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(pairs))
    n_hold = int(round(cfg.holdout_fraction * len(pairs)))
    if n_hold >= len(pairs):
        n_hold = 0
    held = [pairs[i] for i in order[:n_hold]]
    train = [pairs[i] for i in order[n_hold:]]

    model = QualityRewardModel(vocab, cfg.feature_dim, cfg.hidden_dim, seed=cfg.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    losses = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(train), cfg.batch_size):
            batch = [train[i] for i in perm[start : start + cfg.batch_size]]
            chosen, rejected = pair_scores(model, batch)
            loss = ranking_loss_from_margin(chosen - rejected).mean()
            if cfg.center_coeff:
                loss = loss + cfg.center_coeff * ((chosen + rejected) ** 2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
        losses.append(total / len(train))
    return RMTrainResult(
        model=model,
        heldout_accuracy=ranking_accuracy(model, held) if held else float("nan"),
        train_accuracy=ranking_accuracy(model, train),
        epoch_losses=losses,
    )


def save_model(model: QualityRewardModel, path) -> None:
    payload = {
        "vocab_size": model.vocab_size,
        "feature_dim": model.feature_dim,
        "hidden_dim": model.hidden_dim,
        "parameters": model.parameter_vector().detach().tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_model(path) -> QualityRewardModel:
    payload = json.loads(Path(path).read_text())
    model = QualityRewardModel(payload["vocab_size"], payload["feature_dim"], payload["hidden_dim"])
    model.load_parameter_vector(payload["parameters"])
    return model


# ---------------------------------------------------------------------------
# Alignment, composition and KL penalty


def alignment_reward(confidences, qualities, normalize: bool = False) -> np.ndarray:
    """Per-sample sum over the batch of (c_i - c_j)(q_i - q_j), j != i.

    Uses the centred O(n) expansion n*c'_i*q'_i + sum(c'q') with c', q' the
    deviations from the batch means. Sums are exactly rounded (fsum), so the
    result is bitwise permutation-equivariant.
    """
    c = np.asarray(confidences, dtype=float)
    q = np.asarray(qualities, dtype=float)
    if c.shape != q.shape or c.ndim != 1:
        raise ValueError(f"length mismatch: {c.shape} vs {q.shape}")
    n = len(c)
    if n == 0:
        raise ValueError("alignment reward needs at least one sample")
    if n == 1:
        return np.zeros(1)
    dc = c - math.fsum(c) / n
    dq = q - math.fsum(q) / n
    out = n * dc * dq + math.fsum(dc * dq)
    if normalize:
        out = out / (n - 1)
    return out


def overall_reward(config: RewardConfig, quality, alignment) -> np.ndarray:
    q = np.asarray(quality, dtype=float)
    a = np.asarray(alignment, dtype=float)
    if q.shape != a.shape:
        raise ValueError(f"length mismatch: {q.shape} vs {a.shape}")
    return q + config.alpha * a


def batch_rewards(config: RewardConfig, confidences, qualities) -> BatchRewards:
    q = np.asarray(qualities, dtype=float)
    a = alignment_reward(confidences, q, config.normalize_alignment)
    return BatchRewards(q, a, overall_reward(config, q, a))


def kl_log_ratio(logprob_policy, logprob_reference) -> float:
    lp = np.asarray(logprob_policy, dtype=float)
    lr = np.asarray(logprob_reference, dtype=float)
    if lp.shape != lr.shape:
        raise ValueError(f"length mismatch: {lp.shape} vs {lr.shape}")
    return float(np.sum(lp - lr))


def final_reward(config: RewardConfig, overall: float, logprob_policy, logprob_reference) -> float:
    """overall - beta * sampled-trajectory estimate of KL(policy || reference)."""
    return overall - config.beta * kl_log_ratio(logprob_policy, logprob_reference)


def response_tokens_for_quality(env, ep) -> tuple:
    """What the quality scorer sees: the answer token, or the raw output if malformed."""
    if ep.answer is not None:
        return (ep.answer,)
    toks = tuple(t for t in ep.actions if t != env.config.eos)
    return toks or (env.config.eos,)


class ConqordReward:
    """Quality score plus alpha times the batch-local order-preserving alignment reward.

    Malformed episodes keep their quality score but sit out of the alignment
    batch (alignment 0).
    """

    def __init__(self, model: QualityRewardModel, config: RewardConfig, zero_alignment: bool = False):
        self.model = model
        self.config = config
        self.zero_alignment = zero_alignment

    def __call__(self, env, episodes) -> BatchRewards:
        with torch.no_grad():
            q = self.model.score_batch(
                [env.judge_context(ep.prompt_id, ep.gold) for ep in episodes],
                [response_tokens_for_quality(env, ep) for ep in episodes],
            ).numpy().astype(float)
        a = np.zeros(len(episodes))
        ok = [i for i, ep in enumerate(episodes) if ep.well_formed]
        if len(ok) >= 1 and not self.zero_alignment:
            conf = [episodes[i].confidence for i in ok]
            a[ok] = alignment_reward(conf, q[ok], self.config.normalize_alignment)
        return BatchRewards(q, a, overall_reward(self.config, q, a))
