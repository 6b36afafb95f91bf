"""Confidence-gated retrieval: answer directly when confident, otherwise
consult a synthetic oracle that usually fixes errors but sometimes corrupts
correct answers."""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass, fields
from typing import Literal, Optional, Sequence

import numpy as np

from .env import ToyQAEnv

Decision = Literal["self_answer", "retrieve"]


@dataclass(frozen=True)
class GateConfig:
    """Retrieve iff confidence < threshold."""

    threshold: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold!r}")


@dataclass(frozen=True)
class RetrievalOracle:
    help_prob_low: float = 0.8  # P(incorrect -> correct)
    noise_prob: float = 0.2  # P(correct -> incorrect)
    seed: int = 0

    def __post_init__(self):
        for name in ("help_prob_low", "noise_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")


@dataclass(frozen=True)
class GateOutcome:
    decision: Decision
    final_correct: bool


def gate(confidence: float, config: GateConfig) -> Decision:
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence must lie in [0, 1], got {confidence!r}")
    return "retrieve" if confidence < config.threshold else "self_answer"


def oracle_outcome(correct_before: bool, oracle: RetrievalOracle, u: float) -> bool:
    """Retrieval result for a given uniform draw u in [0, 1)."""
    if correct_before:
        return not u < oracle.noise_prob
    return u < oracle.help_prob_low


def apply_oracle(correct_before: bool, oracle: RetrievalOracle, rng: np.random.Generator) -> bool:
    return oracle_outcome(correct_before, oracle, rng.random())


def gated_outcome(confidence: Optional[float], correct: bool, config: GateConfig, oracle, u: float) -> GateOutcome:
    # an output with no stated confidence is treated as unsure
    decision = "retrieve" if confidence is None else gate(confidence, config)
    if decision == "self_answer":
        return GateOutcome(decision, bool(correct))
    return GateOutcome(decision, oracle_outcome(correct, oracle, u))


@dataclass(frozen=True)
class EpisodeStream:
    """Fixed per-episode draws shared by every threshold in a comparison."""

    confidences: tuple  # float or None per episode
    correct: tuple
    uniforms: tuple

    def __post_init__(self):
        if not (len(self.confidences) == len(self.correct) == len(self.uniforms)):
            raise ValueError("stream fields must have equal length")
        if not self.correct:
            raise ValueError("empty episode stream")


def sample_stream(policy, env: ToyQAEnv, n_episodes: int, rng: np.random.Generator, oracle_rng: np.random.Generator) -> EpisodeStream:
    from .ppo import generate

    states = [env.reset(rng) for _ in range(n_episodes)]
    golds = [s.gold for s in states]
    actions, _, _, _ = generate(policy, env, states, rng)
    conf = tuple(env.parse_actions(a)[1] for a in actions)
    correct = tuple(env.judge(a, g) for a, g in zip(actions, golds))
    return EpisodeStream(conf, correct, tuple(oracle_rng.random(n_episodes).tolist()))


@dataclass(frozen=True)
class PipelineRow:
    threshold: float
    n_retrieved: int
    n_self: int
    acc_retrieved_bucket: float
    acc_self_bucket: float
    acc_overall: float
    acc_always_retrieve: float
    acc_never_retrieve: float
    # accuracy of the retrieved bucket before the oracle was applied
    acc_retrieved_before: float = float("nan")


CSV_COLUMNS = tuple(f.name for f in fields(PipelineRow))[:-1]


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else float("nan")


def evaluate_stream(stream: EpisodeStream, config: GateConfig, oracle: RetrievalOracle) -> PipelineRow:
    outcomes = [
        gated_outcome(c, k, config, oracle, u) for c, k, u in zip(stream.confidences, stream.correct, stream.uniforms)
    ]
    ret = [i for i, o in enumerate(outcomes) if o.decision == "retrieve"]
    own = [i for i, o in enumerate(outcomes) if o.decision == "self_answer"]
    always = [oracle_outcome(k, oracle, u) for k, u in zip(stream.correct, stream.uniforms)]
    return PipelineRow(
        threshold=config.threshold,
        n_retrieved=len(ret),
        n_self=len(own),
        acc_retrieved_bucket=_mean([outcomes[i].final_correct for i in ret]),
        acc_self_bucket=_mean([outcomes[i].final_correct for i in own]),
        acc_overall=_mean([o.final_correct for o in outcomes]),
        acc_always_retrieve=_mean(always),
        acc_never_retrieve=_mean(stream.correct),
        acc_retrieved_before=_mean([stream.correct[i] for i in ret]),
    )


def _rngs(oracle: RetrievalOracle, seed: int):
    return np.random.default_rng([seed, 41]), np.random.default_rng([oracle.seed, seed, 43])


def evaluate_pipeline(policy, env: ToyQAEnv, config: GateConfig, oracle: RetrievalOracle, n_episodes: int, seed: int = 0) -> PipelineRow:
    return evaluate_stream(sample_stream(policy, env, n_episodes, *_rngs(oracle, seed)), config, oracle)


def sweep_thresholds(policy, env: ToyQAEnv, oracle: RetrievalOracle, grid: Sequence[float], n_episodes: int, seed: int = 0) -> list[PipelineRow]:
    """One row per threshold, all evaluated on the same episode stream."""
    grid = list(grid)
    if not grid:
        raise ValueError("threshold grid is empty")
    configs = [GateConfig(float(t)) for t in grid]
    stream = sample_stream(policy, env, n_episodes, *_rngs(oracle, seed))
    return [evaluate_stream(stream, c, oracle) for c in configs]


def default_grid(step: float = 0.1) -> list[float]:
    n = int(round(1.0 / step))
    return [round(i * step, 10) for i in range(n + 1)]


def write_rows_csv(rows: Sequence[PipelineRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([v if isinstance(v, int) else repr(float(v)) for v in astuple(r)[: len(CSV_COLUMNS)]])


def best_row(rows: Sequence[PipelineRow]) -> PipelineRow:
    """Highest overall accuracy; ties go to the lowest threshold."""
    return max(rows, key=lambda r: (r.acc_overall, -r.threshold))
