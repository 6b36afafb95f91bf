"""Toy verbalized-QA environment.

Each prompt has a primary and an alternate candidate answer. A prompt's
ambiguity p is the probability that, in a given episode, the alternate is the
gold answer. An output is ``(answer token, confidence token, EOS)``.

Token layout (generation vocabulary, size K + L + 1)::

    0 .. K-1          answer tokens
    K .. K+L-1        confidence tokens, level l -> l / (L - 1)
    K+L               end of sequence

Prompt tokens live above the generation vocabulary (``vocab_size + k``) so
reward models can share one embedding table over both.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import PreferencePair, QAItem


@dataclass
class EnvConfig:
    num_prompts: int = 64
    num_answer_tokens: int = 8
    confidence_levels: int = 11
    # None -> evenly spaced over [0, 0.5] across prompts
    ambiguity_schedule: Optional[tuple] = None
    t_max: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.num_prompts <= 0 or self.num_answer_tokens <= 0:
            raise ValueError("num_prompts and num_answer_tokens must be positive")
        if self.num_answer_tokens < 2:
            raise ValueError("need at least two answer tokens (primary and alternate)")
        if self.confidence_levels < 2:
            raise ValueError("need at least two confidence levels")
        if self.t_max < 3:
            raise ValueError("t_max must be at least 3")
        if self.ambiguity_schedule is not None:
            sched = tuple(float(p) for p in self.ambiguity_schedule)
            if len(sched) != self.num_prompts:
                raise ValueError("ambiguity_schedule needs one entry per prompt")
            if any(not 0.0 <= p <= 1.0 for p in sched):
                raise ValueError("ambiguities must lie in [0, 1]")
            self.ambiguity_schedule = sched

    @property
    def vocab_size(self) -> int:
        return self.num_answer_tokens + self.confidence_levels + 1

    @property
    def eos(self) -> int:
        return self.num_answer_tokens + self.confidence_levels

    @property
    def token_space(self) -> int:
        """Generation vocabulary plus prompt tokens."""
        return self.vocab_size + self.num_prompts

    def ambiguities(self) -> np.ndarray:
        if self.ambiguity_schedule is None:
            return np.linspace(0.0, 0.5, self.num_prompts)
        return np.asarray(self.ambiguity_schedule, dtype=float)


@dataclass(frozen=True)
class EpisodeState:
    prompt_id: int
    emitted_tokens: tuple = ()
    step: int = 0
    done: bool = False
    # this episode's gold answer; never part of the policy's observation
    gold: int = -1


@dataclass
class Episode:
    prompt_id: int
    gold: int
    actions: tuple
    logprobs_policy: np.ndarray
    logprobs_reference: np.ndarray
    values: np.ndarray
    answer: Optional[int]
    confidence: Optional[float]
    correct: bool
    quality: float = 0.0
    alignment: float = 0.0
    overall: float = 0.0
    terminal_reward: float = 0.0
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.actions)
        if not (len(self.logprobs_policy) == len(self.logprobs_reference) == len(self.values) == n):
            raise ValueError("actions, log-probabilities and values must have equal length")

    @property
    def well_formed(self) -> bool:
        return self.answer is not None and self.confidence is not None


class ToyQAEnv:
    def __init__(self, config: EnvConfig):
        self.config = config
        K = config.num_answer_tokens
        rng = np.random.default_rng(config.seed)
        self.primary = rng.integers(K, size=config.num_prompts)
        self.alternate = (self.primary + 1 + rng.integers(K - 1, size=config.num_prompts)) % K
        self.ambiguity = config.ambiguities()

    # -- token helpers --------------------------------------------------
    def confidence_token(self, confidence: float) -> int:
        L = self.config.confidence_levels
        level = int(round(confidence * (L - 1)))
        if not 0 <= level < L:
            raise ValueError(f"confidence {confidence!r} outside [0, 1]")
        return self.config.num_answer_tokens + level

    def token_confidence(self, token: int) -> Optional[float]:
        level = token - self.config.num_answer_tokens
        if 0 <= level < self.config.confidence_levels:
            return level / (self.config.confidence_levels - 1)
        return None

    def is_answer(self, token: int) -> bool:
        return 0 <= token < self.config.num_answer_tokens

    def prompt_tokens(self, prompt_id: int) -> tuple:
        self._check_prompt(prompt_id)
        return (self.config.vocab_size + prompt_id,)

    def judge_context(self, prompt_id: int, gold: int) -> tuple:
        """Prompt tokens followed by the episode's reference answer, as a grader sees them."""
        return self.prompt_tokens(prompt_id) + (gold,)

    def token_text(self, token: int) -> str:
        if self.is_answer(token):
            return f"a{token}"
        conf = self.token_confidence(token)
        if conf is not None:
            return f"{conf:.1f}"
        if token == self.config.eos:
            return "<eos>"
        return f"q{token - self.config.vocab_size}"

    def question_text(self, prompt_id: int) -> str:
        self._check_prompt(prompt_id)
        return f"q{prompt_id}"

    def _check_prompt(self, prompt_id: int):
        if not 0 <= prompt_id < self.config.num_prompts:
            raise KeyError(f"unknown prompt {prompt_id}")

    # -- dynamics -------------------------------------------------------
    def draw_gold(self, prompt_id: int, rng: np.random.Generator) -> int:
        u = rng.random()
        return int(self.alternate[prompt_id] if u < self.ambiguity[prompt_id] else self.primary[prompt_id])

    def reset(self, rng: np.random.Generator) -> EpisodeState:
        k = int(rng.integers(self.config.num_prompts))
        return EpisodeState(prompt_id=k, gold=self.draw_gold(k, rng))

    def reset_prompt(self, prompt_id: int, rng: np.random.Generator) -> EpisodeState:
        self._check_prompt(prompt_id)
        return EpisodeState(prompt_id=prompt_id, gold=self.draw_gold(prompt_id, rng))

    def step(self, state: EpisodeState, action: int) -> tuple[EpisodeState, bool]:
        if state.done or state.step >= self.config.t_max:
            raise RuntimeError("step called on a finished episode")
        if not 0 <= action < self.config.vocab_size:
            raise ValueError(f"token {action} outside the vocabulary")
        emitted = state.emitted_tokens + (int(action),)
        done = action == self.config.eos or len(emitted) >= self.config.t_max
        nxt = EpisodeState(state.prompt_id, emitted, state.step + 1, done, state.gold)
        return nxt, done

    def parse_actions(self, actions: Sequence[int]) -> tuple[Optional[int], Optional[float]]:
        """(answer token, confidence) if the output starts answer-then-confidence."""
        answer = actions[0] if len(actions) >= 1 and self.is_answer(actions[0]) else None
        conf = self.token_confidence(actions[1]) if answer is not None and len(actions) >= 2 else None
        return answer, conf

    def judge(self, actions: Sequence[int], gold: int) -> bool:
        answer, conf = self.parse_actions(actions)
        return answer is not None and conf is not None and answer == gold

    def optimal_confidence(self, prompt_id: int) -> float:
        self._check_prompt(prompt_id)
        p = float(self.ambiguity[prompt_id])
        return max(1.0 - p, p)

    def best_expected_accuracy(self) -> float:
        return float(np.mean([self.optimal_confidence(k) for k in range(self.config.num_prompts)]))

    def qa_items(self) -> list[QAItem]:
        return [
            QAItem(
                prompt_id=self.question_text(k),
                question=self.question_text(k),
                gold_answer=self.token_text(int(self.primary[k])),
                ambiguity=float(self.ambiguity[k]),
            )
            for k in range(self.config.num_prompts)
        ]


def make_preference_pairs(env: ToyQAEnv, n: int, rng: np.random.Generator) -> list[PreferencePair]:
    """Grader-view preference pairs: the episode's gold answer beats a random other answer.

    Separable by construction, since the context carries the reference answer.
    """
    K = env.config.num_answer_tokens
    pairs = []
    for _ in range(n):
        state = env.reset(rng)
        wrong = (state.gold + 1 + int(rng.integers(K - 1))) % K
        pairs.append(PreferencePair(env.judge_context(state.prompt_id, state.gold), (state.gold,), (wrong,)))
    return pairs
