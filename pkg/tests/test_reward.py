import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from confalign.core import PreferencePair
from confalign.env import EnvConfig, ToyQAEnv, make_preference_pairs
from confalign.reward import (
    BatchRewards,
    ConqordReward,
    QualityRewardModel,
    RewardConfig,
    RMTrainConfig,
    alignment_reward,
    batch_rewards,
    final_reward,
    kl_log_ratio,
    load_model,
    overall_reward,
    pad_sequences,
    quality_score,
    ranking_accuracy,
    ranking_loss,
    ranking_loss_from_margin,
    save_model,
    train_quality_rm,
)


def literal_alignment(c, q):
    """Pairwise sum over j != i, written out directly."""
    n = len(c)
    return np.array([sum((c[i] - c[j]) * (q[i] - q[j]) for j in range(n) if j != i) for i in range(n)])


def assert_rel_close(a, b, tol):
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(1.0, float(np.max(np.abs(b))))
    assert np.max(np.abs(a - b)) <= tol * scale


# -- ranking loss ------------------------------------------------------


def test_ranking_loss_zero_margin():
    assert ranking_loss_from_margin(0.0) == pytest.approx(math.log(2), abs=1e-15)


def test_ranking_loss_margin_two():
    assert ranking_loss_from_margin(2.0) == pytest.approx(math.log1p(math.exp(-2.0)), abs=1e-15)
    assert ranking_loss_from_margin(2.0) == pytest.approx(0.126928, abs=1e-6)


def test_ranking_loss_negative_margin_and_symmetry():
    assert ranking_loss_from_margin(-2.0) == pytest.approx(2.126928, abs=1e-6)
    for d in (0.3, 2.0, 7.5):
        lhs = ranking_loss_from_margin(d) + ranking_loss_from_margin(-d) - abs(d)
        assert lhs == pytest.approx(2 * ranking_loss_from_margin(abs(d)), abs=1e-12)


def test_ranking_loss_tensor_matches_numpy():
    d = np.linspace(-30, 30, 61)
    t = ranking_loss_from_margin(torch.tensor(d, dtype=torch.float64)).numpy()
    np.testing.assert_allclose(t, ranking_loss_from_margin(d), rtol=1e-12, atol=0)


@given(st.floats(-50, 50))
def test_ranking_loss_positive(d):
    assert ranking_loss_from_margin(d) > 0


def test_ranking_loss_vanishes_for_large_margin():
    assert ranking_loss_from_margin(40.0) < 1e-17
    vals = ranking_loss_from_margin(np.array([1.0, 5.0, 10.0, 20.0]))
    assert np.all(np.diff(vals) < 0)


# -- scorer ------------------------------------------------------------


def test_quality_score_deterministic():
    m = QualityRewardModel(10, seed=3)
    assert quality_score(m, (1, 2), (3,)) == quality_score(m, (1, 2), (3,))


def test_zero_parameters_score_zero():
    m = QualityRewardModel(10, seed=3)
    m.load_parameter_vector(torch.zeros_like(m.parameter_vector()))
    for prompt, resp in [((1,), (2,)), ((0, 5, 9), (4, 4))]:
        assert quality_score(m, prompt, resp) == 0.0


def test_quality_score_rejects_empty():
    m = QualityRewardModel(10)
    with pytest.raises(ValueError):
        quality_score(m, (), (1,))


def test_pad_sequences_mask():
    ids, mask = pad_sequences([(1, 2, 3), (4,)])
    assert ids.tolist() == [[1, 2, 3], [4, 0, 0]]
    assert mask.tolist() == [[1, 1, 1], [1, 0, 0]]


def test_padding_does_not_change_scores():
    m = QualityRewardModel(12, seed=1)
    with torch.no_grad():
        alone = m.score_batch([(3,)], [(5, 6)])
        batched = m.score_batch([(3,), (1, 2, 4, 7)], [(5, 6), (1,)])
    # batched matmuls may reassociate, so equality is to rounding only
    assert float(alone[0]) == pytest.approx(float(batched[0]), rel=1e-13)


def test_save_load_bit_exact(tmp_path):
    m = QualityRewardModel(15, feature_dim=4, hidden_dim=8, seed=2)
    save_model(m, tmp_path / "rm.json")
    m2 = load_model(tmp_path / "rm.json")
    p, r = [(1, 2), (14,)], [(3,), (0, 7)]
    assert torch.equal(m.score_batch(p, r), m2.score_batch(p, r))


def _flat_grad(model, pair):
    model.zero_grad()
    ranking_loss(model, pair).backward()
    return torch.cat([p.grad.reshape(-1) for p in model.parameters()]).clone()


def test_ranking_loss_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    model = QualityRewardModel(9, feature_dim=3, hidden_dim=5, seed=4)
    pair = PreferencePair((1, 2), (3, 4), (5,))
    grad = _flat_grad(model, pair)
    theta = model.parameter_vector().detach().clone()
    idx = rng.choice(len(theta), size=40, replace=False)
    h = 1e-6
    worst = 0.0
    for i in idx:
        up, down = theta.clone(), theta.clone()
        up[i] += h
        down[i] -= h
        with torch.no_grad():
            model.load_parameter_vector(up)
            lu = float(ranking_loss(model, pair))
            model.load_parameter_vector(down)
            ld = float(ranking_loss(model, pair))
        fd = (lu - ld) / (2 * h)
        worst = max(worst, abs(fd - float(grad[i])) / max(1e-8, abs(fd), abs(float(grad[i]))))
    model.load_parameter_vector(theta)
    # entries whose true gradient is exactly zero (unused embedding rows) compare at the absolute floor
    assert worst < 1e-4


def test_single_pair_loss_decreases():
    pair = PreferencePair((20,), (1,), (2,))
    res = train_quality_rm([pair], RMTrainConfig(epochs=25, holdout_fraction=0.0, vocab_size=21, learning_rate=1e-2))
    assert all(b < a for a, b in zip(res.epoch_losses, res.epoch_losses[1:]))
    assert math.isnan(res.heldout_accuracy)


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        train_quality_rm([])


def test_untrained_scorer_is_near_chance():
    env = ToyQAEnv(EnvConfig())
    pairs = make_preference_pairs(env, 2000, np.random.default_rng(1))
    accs = [ranking_accuracy(QualityRewardModel(env.config.token_space, seed=s), pairs) for s in range(5)]
    assert 0.4 <= float(np.mean(accs)) <= 0.6


def test_reward_centering_pins_score_level():
    env = ToyQAEnv(EnvConfig())
    pairs = make_preference_pairs(env, 800, np.random.default_rng(2))
    cfg = dict(epochs=30, vocab_size=env.config.token_space)
    plain = train_quality_rm(pairs, RMTrainConfig(**cfg)).model
    centred = train_quality_rm(pairs, RMTrainConfig(center_coeff=0.1, **cfg)).model

    def level(m):
        with torch.no_grad():
            ctx = [p.prompt_tokens for p in pairs]
            s = m.score_batch(ctx, [p.chosen_tokens for p in pairs]) + m.score_batch(ctx, [p.rejected_tokens for p in pairs])
        return float((s ** 2).mean())

    assert level(centred) < level(plain)


# -- alignment reward ---------------------------------------------------


def test_alignment_two_samples():
    np.testing.assert_allclose(alignment_reward([0.9, 0.1], [2.0, 1.0]), [0.8, 0.8], atol=1e-15)


def test_alignment_equal_confidences_zero():
    assert np.all(alignment_reward([0.3] * 5, [1, -2, 0.5, 7, 3]) == 0.0)


def test_alignment_anti_aligned_three():
    # middle sample: (0.5 - 0.9)(1 - 0) + (0.5 - 0.1)(1 - 2) = -0.8
    c, q = [0.9, 0.5, 0.1], [0.0, 1.0, 2.0]
    np.testing.assert_allclose(literal_alignment(c, q), [-2.0, -0.8, -2.0], atol=1e-15)
    np.testing.assert_allclose(alignment_reward(c, q), [-2.0, -0.8, -2.0], atol=1e-15)
    assert np.all(alignment_reward(c, q) < 0)


def test_alignment_normalized_divides_by_n_minus_one():
    c, q = [0.9, 0.5, 0.1, 0.7], [0.0, 1.0, 2.0, -1.0]
    np.testing.assert_allclose(alignment_reward(c, q, normalize=True), alignment_reward(c, q) / 3, rtol=1e-14)


def test_alignment_degenerate_sizes():
    assert alignment_reward([0.5], [2.0]).tolist() == [0.0]
    with pytest.raises(ValueError):
        alignment_reward([], [])
    with pytest.raises(ValueError):
        alignment_reward([0.1, 0.2], [1.0])


def test_fast_path_matches_literal_up_to_1024():
    rng = np.random.default_rng(7)
    for n in (2, 3, 17, 256, 1024):
        c, q = rng.random(n), rng.normal(size=n) * 3
        if n <= 256:
            ref = literal_alignment(c, q)
        else:
            dc, dq = c[:, None] - c[None, :], q[:, None] - q[None, :]
            ref = (dc * dq).sum(1)
        assert_rel_close(alignment_reward(c, q), ref, 1e-10)


batch = st.integers(2, 24).flatmap(
    lambda n: st.tuples(
        arrays(np.float64, n, elements=st.floats(0, 1)),
        arrays(np.float64, n, elements=st.floats(-5, 5)),
    )
)


@given(batch, st.floats(-3, 3), st.floats(-3, 3))
def test_alignment_shift_invariance(cq, k, m):
    c, q = cq
    assert_rel_close(alignment_reward(c + k, q + m), alignment_reward(c, q), 1e-10)


@given(batch, st.floats(0.01, 100))
def test_alignment_positive_scaling(cq, s):
    c, q = cq
    base = alignment_reward(c, q)
    assert_rel_close(alignment_reward(s * c, q), s * base, 1e-10)
    assert_rel_close(alignment_reward(c, s * q), s * base, 1e-10)


@given(batch, st.randoms(use_true_random=False))
def test_alignment_permutation_equivariance(cq, rnd):
    c, q = cq
    perm = list(range(len(c)))
    rnd.shuffle(perm)
    assert np.array_equal(alignment_reward(c[perm], q[perm]), alignment_reward(c, q)[perm])


@given(batch)
def test_alignment_sum_identity(cq):
    c, q = cq
    pairs = sum((c[i] - c[j]) * (q[i] - q[j]) for i in range(len(c)) for j in range(i + 1, len(c)))
    assert_rel_close(alignment_reward(c, q).sum(), 2 * pairs, 1e-10)


@given(batch)
def test_alignment_matches_literal(cq):
    c, q = cq
    assert_rel_close(alignment_reward(c, q), literal_alignment(c, q), 1e-10)


def test_pairwise_term_positive_iff_order_preserved():
    for (ci, cj, qi, qj) in itertools.product([0.2, 0.8], [0.2, 0.8], [0.0, 1.0], [0.0, 1.0]):
        term = alignment_reward([ci, cj], [qi, qj])[0]
        preserved = (ci - cj) * (qi - qj) > 0
        assert (term > 0) == preserved


@given(st.integers(2, 6).flatmap(lambda n: st.tuples(
    st.lists(st.floats(0, 1), min_size=n, max_size=n), st.lists(st.floats(-3, 3), min_size=n, max_size=n))))
def test_sort_matching_maximizes_total(cq):
    c, q = np.array(cq[0]), np.array(cq[1])
    totals = {perm: alignment_reward(c[list(perm)], q).sum() for perm in itertools.permutations(range(len(c)))}
    best = max(totals.values())
    matched = np.empty(len(c))
    matched[np.argsort(q, kind="stable")] = np.sort(c)
    assert alignment_reward(matched, q).sum() >= best - 1e-9 * max(1.0, abs(best))


# -- composition and KL ----------------------------------------------------


def test_overall_alpha_zero_is_quality():
    q = np.array([0.3, -1.2, 5.0])
    assert np.array_equal(overall_reward(RewardConfig(alpha=0.0), q, np.array([9.0, 9.0, 9.0])), q)


def test_overall_default_alpha_example():
    assert overall_reward(RewardConfig(alpha=0.4), [1.0], [0.8]) == pytest.approx([1.32], abs=1e-15)


def test_overall_alpha_one_zero_quality():
    a = np.array([0.4, -0.1])
    assert np.array_equal(overall_reward(RewardConfig(alpha=1.0), np.zeros(2), a), a)


def test_final_reward_identical_policies():
    lp = [-0.3, -1.2, -0.01]
    assert final_reward(RewardConfig(), 0.75, lp, lp) == 0.75


def test_final_reward_beta_zero():
    assert final_reward(RewardConfig(beta=0.0), 0.75, [-0.1, -2.0], [-3.0, -0.5]) == 0.75


def test_final_reward_example():
    assert final_reward(RewardConfig(beta=0.005), 1.0, [-1.0, -0.5], [-2.0, -1.5]) == pytest.approx(0.99, abs=1e-15)
    assert kl_log_ratio([-1.0, -0.5], [-2.0, -1.5]) == pytest.approx(2.0)


def test_reward_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(alpha=-0.1)


def test_batch_rewards_composition():
    br = batch_rewards(RewardConfig(alpha=0.4), [0.9, 0.1], [2.0, 1.0])
    np.testing.assert_allclose(br.overall, [2.32, 1.32], atol=1e-14)
    with pytest.raises(ValueError):
        BatchRewards(np.zeros(2), np.zeros(3), np.zeros(2))


def test_conqord_reward_alignment_skips_malformed():
    from confalign.env import Episode

    env = ToyQAEnv(EnvConfig(num_prompts=4))
    model = QualityRewardModel(env.config.token_space, seed=0)
    eos = env.config.eos

    def ep(actions, answer, conf):
        z = np.zeros(len(actions))
        return Episode(0, 0, tuple(actions), z, z, z, answer, conf, False)

    conf_tok = env.confidence_token
    eps = [ep((0, conf_tok(0.9), eos), 0, 0.9), ep((1, conf_tok(0.2), eos), 1, 0.2), ep((eos,), None, None)]
    out = ConqordReward(model, RewardConfig())(env, eps)
    assert out.alignment[2] == 0.0
    assert out.alignment[0] == out.alignment[1] != 0.0
