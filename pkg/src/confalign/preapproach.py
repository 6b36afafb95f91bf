"""Single-reward baseline: a scorer trained to prefer responses whose stated
confidence agrees with their quality, used directly as the PPO reward."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
import torch

from .core import PreferencePair, format_prompt
from .reward import BatchRewards, QualityRewardModel, RMTrainConfig, RMTrainResult, train_quality_rm

Label = Literal["chosen", "rejected"]

HIGH_CONFIDENCE = 0.9
LOW_CONFIDENCE = 0.1


@dataclass(frozen=True)
class AnnotatedTuple:
    """A response with an attached confidence and its role in a comparison.

    ``response`` is the rendered text block; ``response_tokens`` is the answer
    tokens followed by the confidence token, which is what the scorer reads.
    """

    prompt: str
    response: str
    annotated_confidence: float
    label: Label
    good: bool
    prompt_tokens: tuple = ()
    response_tokens: tuple = ()

    def __post_init__(self):
        if self.label not in ("chosen", "rejected"):
            raise ValueError(f"unknown label {self.label!r}")
        high = self.annotated_confidence >= 0.5
        if (self.label == "chosen") != (self.good == high):
            raise ValueError("chosen iff the confidence agrees with the response quality")


def _render(tokens, token_text) -> str:
    return " ".join(token_text(int(t)) for t in tokens)


def build_preapproach_dataset(
    pairs: Sequence[PreferencePair],
    confidence_token,
    token_text=str,
    high: float = HIGH_CONFIDENCE,
    low: float = LOW_CONFIDENCE,
) -> list[tuple[AnnotatedTuple, AnnotatedTuple]]:
    """Two comparisons per pair: good+high beats good+low, bad+low beats bad+high.

    ``confidence_token`` maps a confidence to the token appended to the
    response; ``token_text`` renders tokens for the text form.
    """
    if not 0.0 <= low < 0.5 <= high <= 1.0:
        raise ValueError("need low < 0.5 <= high within [0, 1]")
    out = []
    for pair in pairs:
        prompt = _render(pair.prompt_tokens, token_text)

        def tup(resp, conf, label, good):
            return AnnotatedTuple(
                prompt=prompt,
                response=format_prompt(prompt, _render(resp, token_text), conf),
                annotated_confidence=conf,
                label=label,
                good=good,
                prompt_tokens=tuple(pair.prompt_tokens),
                response_tokens=tuple(resp) + (confidence_token(conf),),
            )

        good, bad = pair.chosen_tokens, pair.rejected_tokens
        out.append((tup(good, high, "chosen", True), tup(good, low, "rejected", True)))
        out.append((tup(bad, low, "chosen", False), tup(bad, high, "rejected", False)))
    return out


def comparisons_to_pairs(dataset) -> list[PreferencePair]:
    return [PreferencePair(c.prompt_tokens, c.response_tokens, r.response_tokens) for c, r in dataset]


def train_preapproach_rm(dataset, cfg: RMTrainConfig = RMTrainConfig()) -> RMTrainResult:
    """The pairwise ranking loss on (prompt, response + confidence) comparisons."""
    if not dataset:
        raise ValueError("cannot train a scorer on an empty dataset")
    return train_quality_rm(comparisons_to_pairs(dataset), cfg)


def scored_tokens(env, ep) -> tuple:
    """Everything the policy emitted before EOS; EOS alone if it emitted nothing else."""
    toks = tuple(t for t in ep.actions if t != env.config.eos)
    return toks or (env.config.eos,)


class PreApproachReward:
    """The scorer's output is the whole sequence-level reward; no alignment term."""

    def __init__(self, model: QualityRewardModel):
        self.model = model

    def __call__(self, env, episodes) -> BatchRewards:
        with torch.no_grad():
            q = self.model.score_batch(
                [env.judge_context(ep.prompt_id, ep.gold) for ep in episodes],
                [scored_tokens(env, ep) for ep in episodes],
            ).numpy().astype(float)
        return BatchRewards(q, np.zeros(len(episodes)), q.copy())


def make_preapproach_scorer(env, n_pairs: int, rng, cfg: Optional[RMTrainConfig] = None) -> RMTrainResult:
    from .env import make_preference_pairs

    cfg = cfg or RMTrainConfig()
    if cfg.vocab_size is None:
        cfg = RMTrainConfig(**{**vars(cfg), "vocab_size": env.config.token_space})
    pairs = make_preference_pairs(env, n_pairs, rng)
    dataset = build_preapproach_dataset(pairs, env.confidence_token, env.token_text)
    return train_preapproach_rm(dataset, cfg)


def run_preapproach(env, scorer: QualityRewardModel, reward_config, ppo_config, seed: int, warm=None,
                    eval_episodes: int = 2000, n_bins: int = 10, ece_variant: str = "absolute"):
    """PPO with the scorer as the only reward; returns (TrainResult, held-out CalibrationReport).

    Training sees only the scorer's output. Gold answers enter through the
    scorer's grader context, exactly as they do for the quality reward model.
    """
    from .ppo import WarmStartConfig, evaluate_report, train

    warm = warm or WarmStartConfig()
    result = train(env, PreApproachReward(scorer), reward_config, ppo_config, seed, warm=warm,
                   n_bins=n_bins, ece_variant=ece_variant)
    rep, _ = evaluate_report(result.policy, env, eval_episodes, seed, None, n_bins, ece_variant)
    return result, rep
