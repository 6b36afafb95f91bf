"""Where KL-regularized training would land if PPO converged exactly.

For a KL weight beta the optimal policy is pi0 * exp(r / beta), renormalized.
The confidence reward of one response depends on the batch means, so the
confidence and answer distributions are iterated to a joint fixed point
(damped). Prints ECE and accuracy at each alpha, which bounds what the
sampled training runs can reach.

    python scripts/fixed_point_analysis.py --beta 0.1 --normalized
"""

import argparse

import numpy as np
import torch

from confalign.env import EnvConfig, ToyQAEnv, make_preference_pairs
from confalign.metrics import spearman
from confalign.reward import RMTrainConfig, train_quality_rm


def expected_quality(env, model):
    n, k = env.config.num_prompts, env.config.num_answer_tokens
    amb = env.config.ambiguities()
    eq, pcorr = np.zeros((n, k)), np.zeros((n, k))
    with torch.no_grad():
        for p in range(n):
            pr, al = int(env.primary[p]), int(env.alternate[p])
            score = lambda g: model.score_batch([env.judge_context(p, g)] * k, [(a,) for a in range(k)]).numpy()
            eq[p] = (1 - amb[p]) * score(pr) + amb[p] * score(al)
            pcorr[p, pr], pcorr[p, al] = 1 - amb[p], amb[p]
    return eq, pcorr


def solve(env, eq, pcorr, alpha, beta, warm_confidences, answer_accuracy, scale=1.0, eps=1e-3, iters=300):
    n, k = eq.shape
    levels = np.linspace(0.0, 1.0, env.config.confidence_levels)
    pc0 = np.full(len(levels), eps)
    for c in warm_confidences:
        pc0[int(round(c * (len(levels) - 1)))] = 1.0
    pc0 /= pc0.sum()
    pa0 = np.full((n, k), (1 - answer_accuracy) / (k - 1))
    pa0[np.arange(n), env.primary] = answer_accuracy
    pa, pc = pa0.copy(), None
    for _ in range(iters):
        q_bar = (pa * eq).sum(1).mean()
        c_bar = float(np.mean(warm_confidences)) if pc is None else (pa[:, :, None] * pc * levels).sum() / n
        r = scale * alpha * (eq - q_bar)[:, :, None] * (levels - c_bar)
        z = np.log(pc0) + r / beta
        m = z.max(-1, keepdims=True)
        pc = np.exp(z - m)
        s = pc.sum(-1, keepdims=True)
        pc /= s
        soft_value = beta * (np.log(s[..., 0]) + m[..., 0])
        za = np.log(pa0) + (eq + soft_value) / beta
        za -= za.max(1, keepdims=True)
        new = np.exp(za)
        new /= new.sum(1, keepdims=True)
        pa = 0.8 * pa + 0.2 * new
    w = pa[:, :, None] * pc / n
    mass = w.sum((0, 1))
    hits = (w * pcorr[:, :, None]).sum((0, 1))
    ece = sum(abs(hits[l] / mass[l] - levels[l]) * mass[l] for l in range(len(levels)) if mass[l] > 1e-12)
    return ece, float((pa * pcorr).sum(1).mean())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--beta", type=float, default=0.1)
    ap.add_argument("--normalized", action="store_true", help="alignment divided by (batch size - 1)")
    ap.add_argument("--batch-size", type=int, default=1024)
    ap.add_argument("--answer-accuracy", type=float, default=0.6)
    ap.add_argument("--warm", default="0.5,0.6,0.7,0.8,0.9,1.0")
    args = ap.parse_args()
    torch.set_num_threads(1)

    env = ToyQAEnv(EnvConfig())
    pairs = make_preference_pairs(env, 2000, np.random.default_rng([0, 5]))
    model = train_quality_rm(pairs, RMTrainConfig(epochs=60, center_coeff=0.1, vocab_size=env.config.token_space)).model
    eq, pcorr = expected_quality(env, model)
    warm = tuple(float(x) for x in args.warm.split(","))
    # the unnormalized pairwise sum grows with batch size
    scale = 1.0 if args.normalized else float(args.batch_size - 1)
    grid = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    res = [solve(env, eq, pcorr, a, args.beta, warm, args.answer_accuracy, scale) for a in grid]
    for a, (e, acc) in zip(grid, res):
        print(f"alpha={a:.1f}  ece={e:.4f}  accuracy={acc:.4f}")
    e = [r[0] for r in res]
    print(f"relative ECE drop at 0.4: {1 - e[2] / e[0]:.3f}; Spearman(alpha, ECE) = {spearman(grid, e)[0]:.2f}")


if __name__ == "__main__":
    main()
