"""Actor-critic PPO for the toy verbalized-QA policy.

The KL penalty enters the per-token reward (not the loss): each step gets
``-beta * (log pi(a_t) - log pi_0(a_t))`` and the last step additionally
receives the sequence-level reward.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .core import ScoredSample
from .env import EnvConfig, Episode, EpisodeState, ToyQAEnv
from .reward import DTYPE, BatchRewards, RewardConfig, kl_log_ratio


@dataclass
class PPOConfig:
    batch_size: int = 32
    updates_per_minibatch: int = 1
    minibatch_size: Optional[int] = None  # None -> whole batch
    clip_epsilon: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 1.0
    value_coeff: float = 0.5
    entropy_coeff: float = 0.01
    learning_rate: float = 3e-4
    weight_decay: float = 0.1
    total_iterations: int = 200
    normalize_advantages: bool = True
    embed_dim: int = 16
    hidden_dim: int = 64
    grammar_mask: bool = True
    step_heads: bool = False
    eval_episodes: int = 256
    eval_interval: int = 1  # rows between evaluations repeat the latest one

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.updates_per_minibatch < 1:
            raise ValueError("updates_per_minibatch must be positive")


@dataclass
class WarmStartConfig:
    """Behaviour cloning on synthetic demonstrations, producing the initial policy."""

    enabled: bool = True
    answer_accuracy: float = 0.6
    confidences: tuple = (0.8, 0.9, 1.0)
    n_demos: int = 2048
    steps: int = 300
    batch_size: int = 256
    learning_rate: float = 1e-2


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, stats: dict):
        super().__init__(f"{message}: {stats}")
        self.stats = stats


# ---------------------------------------------------------------------------
# state encoding and models


@dataclass
class StepRows:
    """Flattened (state, action) rows; one row per generated token."""

    prompt_ids: torch.Tensor  # (N,)
    prefix: torch.Tensor  # (N, t_max) tokens emitted before this step, zero padded
    prefix_mask: torch.Tensor  # (N, t_max)
    steps: torch.Tensor  # (N,)
    actions: Optional[torch.Tensor] = None  # (N,)

    def __len__(self):
        return len(self.prompt_ids)

    @classmethod
    def from_states(cls, states: Sequence[EpisodeState], t_max: int) -> "StepRows":
        return cls.build([(s.prompt_id, s.emitted_tokens) for s in states], t_max)

    @classmethod
    def build(cls, items, t_max: int, actions=None) -> "StepRows":
        n = len(items)
        prompt_ids = np.empty(n, dtype=np.int64)
        prefix = np.zeros((n, t_max), dtype=np.int64)
        steps = np.empty(n, dtype=np.int64)
        for i, (k, toks) in enumerate(items):
            prompt_ids[i] = k
            steps[i] = len(toks)
            prefix[i, : len(toks)] = toks
        mask = (np.arange(t_max)[None, :] < steps[:, None]).astype(np.float64)
        acts = None if actions is None else torch.as_tensor(np.asarray(actions, dtype=np.int64))
        return cls(torch.from_numpy(prompt_ids), torch.from_numpy(prefix), torch.from_numpy(mask), torch.from_numpy(steps), acts)

    def select(self, idx) -> "StepRows":
        idx = torch.as_tensor(idx, dtype=torch.long)
        return StepRows(
            self.prompt_ids[idx],
            self.prefix[idx],
            self.prefix_mask[idx],
            self.steps[idx],
            None if self.actions is None else self.actions[idx],
        )


class StateEncoder(nn.Module):
    def __init__(self, env_config: EnvConfig, embed_dim: int, gen: torch.Generator):
        super().__init__()
        self.t_max = env_config.t_max
        self.prompt_embedding = nn.Parameter(
            torch.randn(env_config.num_prompts, embed_dim, generator=gen, dtype=DTYPE) * 0.5
        )
        self.token_embedding = nn.Parameter(
            torch.randn(env_config.vocab_size, embed_dim, generator=gen, dtype=DTYPE) * 0.5
        )
        self.out_dim = 2 * embed_dim + self.t_max

    def forward(self, rows: StepRows) -> torch.Tensor:
        p = self.prompt_embedding[rows.prompt_ids]
        m = rows.prefix_mask.unsqueeze(-1)
        pooled = (self.token_embedding[rows.prefix] * m).sum(1) / rows.prefix_mask.sum(1, keepdim=True).clamp(min=1.0)
        step = torch.nn.functional.one_hot(rows.steps.clamp(max=self.t_max - 1), self.t_max).to(DTYPE)
        return torch.cat([p, pooled, step], -1)


def _mlp(in_dim, hidden, out_dim, gen):
    layers = nn.Sequential(nn.Linear(in_dim, hidden, dtype=DTYPE), nn.Tanh(), nn.Linear(hidden, out_dim, dtype=DTYPE))
    with torch.no_grad():
        for layer in (layers[0], layers[2]):
            bound = 1.0 / math.sqrt(layer.in_features)
            layer.weight.uniform_(-bound, bound, generator=gen)
            layer.bias.uniform_(-bound, bound, generator=gen)
    return layers


class PolicyModel(nn.Module):
    """Prompt embedding + pooled prefix + step one-hot -> MLP -> vocabulary logits.

    With ``step_heads`` the answer step, the confidence step and the remaining
    steps each get their own encoder and MLP instead of sharing one.
    """

    def __init__(self, env_config: EnvConfig, embed_dim=16, hidden_dim=64, grammar_mask=True, seed=0, step_heads=False):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.env_config = env_config
        self.grammar_mask = grammar_mask
        self.step_heads = step_heads
        n = 3 if step_heads else 1
        self.encoders = nn.ModuleList(StateEncoder(env_config, embed_dim, gen) for _ in range(n))
        self.heads = nn.ModuleList(_mlp(self.encoders[0].out_dim, hidden_dim, env_config.vocab_size, gen) for _ in range(n))
        K, L, V = env_config.num_answer_tokens, env_config.confidence_levels, env_config.vocab_size
        legal = torch.zeros((env_config.t_max, V), dtype=torch.bool)
        legal[0, :K] = True
        legal[1, K : K + L] = True
        legal[2:, K + L] = True
        self.register_buffer("legal", legal)

    def logits(self, rows: StepRows) -> torch.Tensor:
        if not self.step_heads:
            z = self.heads[0](self.encoders[0](rows))
        else:
            group = rows.steps.clamp(max=2)
            z = torch.empty((len(rows), self.env_config.vocab_size), dtype=DTYPE)
            for h in range(3):
                idx = torch.nonzero(group == h).squeeze(1)
                if len(idx):
                    z = z.index_copy(0, idx, self.heads[h](self.encoders[h](rows.select(idx))))
        if self.grammar_mask:
            z = z.masked_fill(~self.legal[rows.steps], float("-inf"))
        return z

    def log_probs(self, rows: StepRows) -> torch.Tensor:
        return torch.log_softmax(self.logits(rows), -1)

    def action_log_prob_entropy(self, rows: StepRows) -> tuple[torch.Tensor, torch.Tensor]:
        logp = self.log_probs(rows)
        p = logp.exp()
        # masked tokens: p = 0 and logp = -inf; zero logp there so the product has a finite gradient
        ent = -(p * logp.masked_fill(p == 0, 0.0)).sum(-1)
        return logp.gather(1, rows.actions.unsqueeze(1)).squeeze(1), ent


class ValueModel(nn.Module):
    def __init__(self, env_config: EnvConfig, embed_dim=16, hidden_dim=64, seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed + 7919)
        self.encoder = StateEncoder(env_config, embed_dim, gen)
        self.head = _mlp(self.encoder.out_dim, hidden_dim, 1, gen)

    def forward(self, rows: StepRows) -> torch.Tensor:
        return self.head(self.encoder(rows)).squeeze(-1)


def make_reference(policy: PolicyModel) -> PolicyModel:
    ref = copy.deepcopy(policy)
    for p in ref.parameters():
        p.requires_grad_(False)
    return ref


def parameter_vector(model: nn.Module) -> torch.Tensor:
    return nn.utils.parameters_to_vector(model.parameters()).detach().clone()


def save_policy(policy: PolicyModel, path) -> None:
    cfg = policy.env_config
    payload = {
        "env": {
            "num_prompts": cfg.num_prompts,
            "num_answer_tokens": cfg.num_answer_tokens,
            "confidence_levels": cfg.confidence_levels,
            "ambiguity_schedule": list(cfg.ambiguity_schedule) if cfg.ambiguity_schedule else None,
            "t_max": cfg.t_max,
            "seed": cfg.seed,
        },
        "embed_dim": policy.encoders[0].prompt_embedding.shape[1],
        "hidden_dim": policy.heads[0][0].out_features,
        "grammar_mask": policy.grammar_mask,
        "step_heads": policy.step_heads,
        "parameters": parameter_vector(policy).tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_policy(path) -> PolicyModel:
    payload = json.loads(Path(path).read_text())
    env = payload["env"]
    if env["ambiguity_schedule"] is not None:
        env["ambiguity_schedule"] = tuple(env["ambiguity_schedule"])
    policy = PolicyModel(
        EnvConfig(**env), payload["embed_dim"], payload["hidden_dim"], payload["grammar_mask"], step_heads=payload["step_heads"]
    )
    nn.utils.vector_to_parameters(torch.as_tensor(payload["parameters"], dtype=DTYPE), policy.parameters())
    return policy


# ---------------------------------------------------------------------------
# rollouts


def _sample(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # inverse CDF with u in (0, total] so a zero-probability token is never chosen
    cdf = np.cumsum(probs, axis=1)
    u = (1.0 - rng.random(len(probs))) * cdf[:, -1]
    return (cdf < u[:, None]).sum(1)


def generate(policy, env: ToyQAEnv, states: list, rng, reference=None, value=None, greedy=False):
    """Run a batch of episodes to completion; ``states`` is updated in place.

    Returns per-episode action lists and, when the models are given, arrays of
    log-probabilities under policy and reference and value estimates.
    """
    t_max = env.config.t_max
    n = len(states)
    prompt_ids = np.fromiter((s.prompt_id for s in states), dtype=np.int64, count=n)
    prefix = np.zeros((n, t_max), dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    lp = np.zeros((n, t_max))
    lr = np.zeros((n, t_max))
    vals = np.zeros((n, t_max))
    active = np.arange(n)
    with torch.no_grad():
        while active.size:
            st = steps[active]
            mask = (np.arange(t_max)[None, :] < st[:, None]).astype(np.float64)
            rows = StepRows(*(torch.from_numpy(a) for a in (prompt_ids[active], prefix[active], mask, st)))
            logp = policy.log_probs(rows)
            probs = logp.exp().numpy()
            chosen = probs.argmax(1) if greedy else _sample(probs, rng)
            chosen_t = torch.from_numpy(chosen.astype(np.int64)).unsqueeze(1)
            lp[active, st] = logp.gather(1, chosen_t).squeeze(1).numpy()
            if reference is not None:
                lr[active, st] = reference.log_probs(rows).gather(1, chosen_t).squeeze(1).numpy()
            if value is not None:
                vals[active, st] = value(rows).numpy()
            prefix[active, st] = chosen
            steps[active] += 1
            done = np.zeros(active.size, dtype=bool)
            for j, i in enumerate(active.tolist()):
                states[i], done[j] = env.step(states[i], int(chosen[j]))
            active = active[~done]
    lengths = steps.tolist()
    actions = [prefix[i, :T].tolist() for i, T in enumerate(lengths)]
    return (
        actions,
        [lp[i, :T] for i, T in enumerate(lengths)],
        [lr[i, :T] for i, T in enumerate(lengths)] if reference is not None else [np.zeros(0)] * n,
        [vals[i, :T] for i, T in enumerate(lengths)] if value is not None else [np.zeros(0)] * n,
    )


RewardFn = Callable[[ToyQAEnv, list], BatchRewards]


def collect_rollouts(policy, reference, value, env: ToyQAEnv, reward_fn, n: int, rng, reward_config: RewardConfig) -> list[Episode]:
    """Sample n episodes, score them as a batch, and attach KL-penalised rewards."""
    if n < 2:
        raise ValueError("need at least two episodes per batch for pairwise alignment")
    states = [env.reset(rng) for _ in range(n)]
    starts = list(states)
    actions, lp, lr, vals = generate(policy, env, states, rng, reference, value)
    episodes = []
    for s, acts, a_lp, a_lr, a_v in zip(starts, actions, lp, lr, vals):
        answer, conf = env.parse_actions(acts)
        episodes.append(
            Episode(
                prompt_id=s.prompt_id,
                gold=s.gold,
                actions=tuple(acts),
                logprobs_policy=a_lp,
                logprobs_reference=a_lr,
                values=a_v,
                answer=answer,
                confidence=conf,
                correct=env.judge(acts, s.gold),
            )
        )
    rewards = reward_fn(env, episodes)
    kl = _episode_kl(episodes)
    for ep, q, a, o, k in zip(episodes, rewards.quality, rewards.alignment, rewards.overall, kl):
        ep.quality, ep.alignment, ep.overall = float(q), float(a), float(o)
        ep.terminal_reward = ep.overall - reward_config.beta * k
    return episodes


def _episode_kl(episodes: list[Episode]) -> list[float]:
    if len({len(ep.actions) for ep in episodes}) == 1:
        # equal lengths: one array op; same per-row sums as kl_log_ratio
        lp = np.stack([ep.logprobs_policy for ep in episodes])
        lr = np.stack([ep.logprobs_reference for ep in episodes])
        return (lp - lr).sum(1).tolist()
    return [kl_log_ratio(ep.logprobs_policy, ep.logprobs_reference) for ep in episodes]


def step_rewards(ep: Episode, beta: float) -> np.ndarray:
    r = -beta * (np.asarray(ep.logprobs_policy) - np.asarray(ep.logprobs_reference))
    r[-1] += ep.overall
    return r


# ---------------------------------------------------------------------------
# advantages and update


def gae(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Generalised advantage estimates for one finished episode (V after the end is 0)."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    T = len(rewards)
    adv = np.zeros(T)
    running = 0.0
    for t in reversed(range(T)):
        nxt = values[t + 1] if t + 1 < T else 0.0
        delta = rewards[t] + gamma * nxt - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv


def gae_batch(rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """:func:`gae` applied row-wise to equal-length episodes, shape (N, T)."""
    N, T = rewards.shape
    adv = np.zeros((N, T))
    running = np.zeros(N)
    for t in reversed(range(T)):
        nxt = values[:, t + 1] if t + 1 < T else 0.0
        delta = rewards[:, t] + gamma * nxt - values[:, t]
        running = delta + gamma * lam * running
        adv[:, t] = running
    return adv


def compute_advantages(episodes: list[Episode], config: PPOConfig, beta: float) -> list[Episode]:
    if len({len(ep.actions) for ep in episodes}) == 1:
        R = np.stack([step_rewards(ep, beta) for ep in episodes])
        V = np.stack([ep.values for ep in episodes])
        A = gae_batch(R, V, config.gamma, config.gae_lambda)
        for ep, a in zip(episodes, A):
            ep.advantages = a
            ep.returns = a + ep.values
    else:
        for ep in episodes:
            ep.advantages = gae(step_rewards(ep, beta), ep.values, config.gamma, config.gae_lambda)
            ep.returns = ep.advantages + ep.values
    if config.normalize_advantages:
        flat = np.concatenate([ep.advantages for ep in episodes])
        mu, sd = flat.mean(), flat.std()
        for ep in episodes:
            ep.advantages = (ep.advantages - mu) / (sd + 1e-8)
    return episodes


@dataclass
class UpdateBatch:
    rows: StepRows
    logp_old: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor

    @classmethod
    def from_episodes(cls, episodes: list[Episode], t_max: int) -> "UpdateBatch":
        lengths = np.array([len(ep.actions) for ep in episodes], dtype=np.int64)
        acts = np.zeros((len(episodes), t_max), dtype=np.int64)
        for i, ep in enumerate(episodes):
            acts[i, : lengths[i]] = ep.actions
        steps = np.concatenate([np.arange(T) for T in lengths])
        full = np.repeat(acts, lengths, axis=0)
        mask = np.arange(t_max)[None, :] < steps[:, None]
        rows = StepRows(
            torch.from_numpy(np.repeat(np.array([ep.prompt_id for ep in episodes], dtype=np.int64), lengths)),
            torch.from_numpy(np.where(mask, full, 0)),
            torch.from_numpy(mask.astype(np.float64)),
            torch.from_numpy(steps),
            torch.from_numpy(full[np.arange(len(steps)), steps]),
        )
        cat = lambda name: torch.from_numpy(np.concatenate([np.asarray(getattr(ep, name), dtype=float) for ep in episodes]))
        return cls(rows, cat("logprobs_policy"), cat("advantages"), cat("returns"))


def clipped_surrogate(logp_new: torch.Tensor, logp_old: torch.Tensor, advantages: torch.Tensor, eps: float):
    """Mean clipped surrogate objective (to be maximised) and clip fraction."""
    ratio = torch.exp(logp_new - logp_old)
    obj = torch.minimum(ratio * advantages, ratio.clamp(1 - eps, 1 + eps) * advantages)
    clip_frac = ((ratio - 1).abs() > eps).double().mean()
    return obj.mean(), clip_frac


def ppo_losses(policy: PolicyModel, value: ValueModel, batch: UpdateBatch, config: PPOConfig) -> dict:
    logp, ent = policy.action_log_prob_entropy(batch.rows)
    surrogate, clip_frac = clipped_surrogate(logp, batch.logp_old, batch.advantages, config.clip_epsilon)
    value_loss = ((value(batch.rows) - batch.returns) ** 2).mean()
    entropy = ent.mean()
    total = -surrogate + config.value_coeff * value_loss - config.entropy_coeff * entropy
    return {"total": total, "policy_loss": -surrogate, "value_loss": value_loss, "entropy": entropy, "clip_fraction": clip_frac}


def make_optimizer(policy, value, config: PPOConfig):
    params = list(policy.parameters()) + list(value.parameters())
    return torch.optim.AdamW(params, lr=config.learning_rate, weight_decay=config.weight_decay)


def ppo_update(policy, value, episodes: list[Episode], config: PPOConfig, optimizer, rng) -> dict:
    """One pass over the batch: ``updates_per_minibatch`` gradient steps on each minibatch."""
    if any(ep.advantages is None for ep in episodes):
        raise ValueError("compute_advantages must run before ppo_update")
    mb = config.minibatch_size or len(episodes)
    order = rng.permutation(len(episodes)) if mb < len(episodes) else np.arange(len(episodes))
    sums = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_fraction": 0.0}
    count = 0
    for start in range(0, len(episodes), mb):
        batch = UpdateBatch.from_episodes([episodes[i] for i in order[start : start + mb]], policy.env_config.t_max)
        for _ in range(config.updates_per_minibatch):
            losses = ppo_losses(policy, value, batch, config)
            stats = {k: float(v.detach()) for k, v in losses.items()}
            if not all(math.isfinite(v) for v in stats.values()):
                raise TrainingDiverged("non-finite PPO loss", stats)
            optimizer.zero_grad()
            losses["total"].backward()
            optimizer.step()
            for k in sums:
                sums[k] += stats[k]
            count += 1
    stats = {k: v / count for k, v in sums.items()}
    stats["mean_kl"] = float(np.mean(_episode_kl(episodes)))
    return stats


# ---------------------------------------------------------------------------
# warm start, evaluation, training loop


def warm_start(policy: PolicyModel, env: ToyQAEnv, cfg: WarmStartConfig, rng) -> PolicyModel:
    """Behaviour-clone demonstrations: primary answer with prob answer_accuracy, else a
    random other answer; confidence drawn from cfg.confidences regardless of answer."""
    if not cfg.enabled:
        return policy
    K = env.config.num_answer_tokens
    items, acts = [], []
    for _ in range(cfg.n_demos):
        k = int(rng.integers(env.config.num_prompts))
        primary = int(env.primary[k])
        if rng.random() < cfg.answer_accuracy:
            a = primary
        else:
            a = (primary + 1 + int(rng.integers(K - 1))) % K
        c = env.confidence_token(cfg.confidences[int(rng.integers(len(cfg.confidences)))])
        seq = (a, c, env.config.eos)
        for t in range(len(seq)):
            items.append((k, seq[:t]))
            acts.append(seq[t])
    rows = StepRows.build(items, env.config.t_max, acts)
    opt = torch.optim.Adam(policy.parameters(), lr=cfg.learning_rate)
    for _ in range(cfg.steps):
        idx = rng.integers(len(rows), size=min(cfg.batch_size, len(rows)))
        sub = rows.select(idx)
        loss = -policy.log_probs(sub).gather(1, sub.actions.unsqueeze(1)).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    return policy


def evaluate_policy(policy, env: ToyQAEnv, n_episodes: int, rng, quality_model=None, parse_failure: str = "drop") -> tuple[list[ScoredSample], int]:
    """Sample held-out episodes; returns (scored samples, parse-failure count)."""
    if parse_failure not in ("drop", "substitute"):
        raise ValueError("parse_failure must be 'drop' or 'substitute'")
    states = [env.reset(rng) for _ in range(n_episodes)]
    starts = list(states)
    actions, _, _, _ = generate(policy, env, states, rng)
    samples, failures = [], 0
    parsed = [env.parse_actions(a) for a in actions]
    qualities = [0.0] * n_episodes
    if quality_model is not None:
        ok = [i for i, (ans, _) in enumerate(parsed) if ans is not None]
        if ok:
            with torch.no_grad():
                q = quality_model.score_batch(
                    [env.judge_context(starts[i].prompt_id, starts[i].gold) for i in ok],
                    [(parsed[i][0],) for i in ok],
                ).numpy()
            for i, v in zip(ok, q):
                qualities[i] = float(v)
    for i, (s, acts) in enumerate(zip(starts, actions)):
        answer, conf = parsed[i]
        if answer is None or conf is None:
            failures += 1
            if parse_failure == "drop":
                continue
            conf = 0.5
        samples.append(
            ScoredSample(
                prompt_id=f"{s.prompt_id}:{i}",
                prompt_tokens=env.prompt_tokens(s.prompt_id),
                response_tokens=tuple(acts),
                confidence=conf,
                quality=qualities[i],
                correct=env.judge(acts, s.gold),
            )
        )
    return samples, failures


def evaluate_report(policy, env: ToyQAEnv, n_episodes: int, seed: int, quality_model=None, n_bins: int = 10,
                    ece_variant: str = "absolute", parse_failure: str = "drop"):
    """Held-out metrics on a stream fixed by ``seed``, so policies evaluated
    with the same seed see the same prompts; returns (report, samples)."""
    from .metrics import report

    samples, _ = evaluate_policy(policy, env, n_episodes, np.random.default_rng([seed, 99]), quality_model, parse_failure)
    if not samples:
        raise ValueError("every evaluation episode failed to parse")
    return report(samples, n_bins, ece_variant), samples


LOG_COLUMNS = (
    "iteration",
    "mean_quality",
    "mean_alignment",
    "mean_overall",
    "mean_kl",
    "ece",
    "accuracy",
    "entropy",
    "clip_fraction",
)


@dataclass
class TrainResult:
    policy: PolicyModel
    reference: PolicyModel
    value: ValueModel
    log: list = field(default_factory=list)


def init_policy(env: ToyQAEnv, config: PPOConfig, warm: WarmStartConfig, seed: int) -> PolicyModel:
    policy = PolicyModel(env.config, config.embed_dim, config.hidden_dim, config.grammar_mask, seed=seed, step_heads=config.step_heads)
    return warm_start(policy, env, warm, np.random.default_rng([seed, 11]))


def train(env: ToyQAEnv, reward_fn, reward_config: RewardConfig, config: PPOConfig, seed: int,
          policy: Optional[PolicyModel] = None, warm: WarmStartConfig = WarmStartConfig(),
          n_bins: int = 10, ece_variant: str = "absolute") -> TrainResult:
    from .metrics import accuracy, ece

    if policy is None:
        policy = init_policy(env, config, warm, seed)
    reference = make_reference(policy)
    value = ValueModel(env.config, config.embed_dim, config.hidden_dim, seed=seed)
    optimizer = make_optimizer(policy, value, config)
    rng = np.random.default_rng([seed, 23])
    rows = []
    for it in range(config.total_iterations):
        episodes = collect_rollouts(policy, reference, value, env, reward_fn, config.batch_size, rng, reward_config)
        compute_advantages(episodes, config, reward_config.beta)
        stats = ppo_update(policy, value, episodes, config, optimizer, rng)
        if it % config.eval_interval == 0 or it == config.total_iterations - 1:
            samples, _ = evaluate_policy(policy, env, config.eval_episodes, np.random.default_rng([seed, 31, it]))
            pairs = [(s.confidence, s.correct) for s in samples]
            held_ece = ece(pairs, n_bins, ece_variant)[0] if pairs else float("nan")
            held_acc = accuracy([c for _, c in pairs]) if pairs else float("nan")
        row = {
            "iteration": it,
            "mean_quality": float(np.mean([e.quality for e in episodes])),
            "mean_alignment": float(np.mean([e.alignment for e in episodes])),
            "mean_overall": float(np.mean([e.overall for e in episodes])),
            "mean_kl": stats["mean_kl"],
            "ece": held_ece,
            "accuracy": held_acc,
            "entropy": stats["entropy"],
            "clip_fraction": stats["clip_fraction"],
        }
        rows.append(row)
    return TrainResult(policy, reference, value, rows)
