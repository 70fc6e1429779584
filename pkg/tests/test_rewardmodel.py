"""Reward-model tests: logistic identities, training behavior, accuracy evaluation."""

import math

import numpy as np
import pytest

from prefnav import sim2d
from prefnav.querygen import PreferencePair, Segment
from prefnav.rewardmodel import (
    RewardModel,
    evaluate_accuracy,
    preference_loss,
    preference_probability,
    train_reward_model,
)

TINY_NET = dict(trunk_widths=(16, 12), encoder_hidden=8)


def make_scene(seed=900):
    return sim2d.sample_scene(seed, 0, arena=8.0, goal_dist=(2.0, 4.0))


def random_segment(rng, k=20, scene=None):
    """Synthetic segment with a smoothly varying human distance (as in rollouts)."""
    scene = scene or make_scene()
    obs = np.zeros((k, 34))
    obs[:, :30] = rng.uniform(3, 6, size=(k, 30))
    obs[:, 30] = rng.uniform(1, 8, size=k)            # d_g
    obs[:, 31] = rng.uniform(-np.pi, np.pi, size=k)   # theta_g
    level = rng.uniform(0.5, 5.5)                     # per-segment proximity level
    obs[:, 32] = np.clip(level + np.cumsum(rng.normal(0, 0.05, size=k)), 0.1, 8.0)
    obs[:, 33] = rng.uniform(-np.pi, np.pi, size=k)
    actions = rng.uniform(-1, 1, size=(k, 2))
    poses = np.zeros((k + 1, 3))
    return Segment(
        parent_id="synthetic",
        start=0,
        observations=obs,
        actions=actions,
        poses=poses,
        scene=scene,
        min_human_distance=float(obs[:, 32].min()),
    )


def synthetic_pairs(rng, n, label_by_min_dh=True):
    """Oracle-style dataset: prefer the segment with larger min d_h."""
    scene = make_scene()
    pairs = []
    for i in range(n):
        a = random_segment(rng, scene=scene)
        b = random_segment(rng, scene=scene)
        choice = "first" if a.min_human_distance > b.min_human_distance else "second"
        if not label_by_min_dh:
            choice = "first" if rng.random() < 0.5 else "second"
        pairs.append(
            PreferencePair(
                pair_id=f"syn-{i:04d}", source="segment", first=a, second=b, choice=choice,
                annotator="oracle",
            )
        )
    return pairs


# -- probability identities ----------------------------------------------------------

def test_equal_returns_give_half():
    model = RewardModel(**TINY_NET, seed=0)
    rng = np.random.default_rng(0)
    seg = random_segment(rng)
    assert preference_probability(model, seg, seg) == pytest.approx(0.5)


def test_logistic_closed_form_value():
    # R(first) - R(second) = 2  ->  P = 1 / (1 + e^-2) ~ 0.8808
    model = RewardModel(**TINY_NET, seed=1)
    rng = np.random.default_rng(1)
    a = random_segment(rng)
    b = random_segment(rng)
    gap = model.item_return(a) - model.item_return(b)
    # Rescale the final layer so the return gap is exactly 2.
    model.net.trunk.weights[-1] *= 2.0 / gap
    model.net.trunk.biases[-1] *= 2.0 / gap
    assert model.item_return(a) - model.item_return(b) == pytest.approx(2.0, rel=1e-9)
    assert preference_probability(model, a, b) == pytest.approx(1.0 / (1.0 + math.exp(-2.0)), rel=1e-9)


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(2)
    for seed in range(10):
        model = RewardModel(**TINY_NET, seed=seed)
        a, b = random_segment(rng), random_segment(rng)
        p_ab = preference_probability(model, a, b)
        p_ba = preference_probability(model, b, a)
        assert p_ab + p_ba == pytest.approx(1.0, abs=1e-12)


def test_loss_at_zeroed_head_is_ln2():
    model = RewardModel(**TINY_NET, seed=3)
    model.net.trunk.weights[-1][...] = 0.0
    model.net.trunk.biases[-1][...] = 0.0
    pairs = synthetic_pairs(np.random.default_rng(3), 8)
    assert preference_loss(model, pairs) == pytest.approx(math.log(2.0), rel=1e-12)


def test_swap_pair_and_label_leaves_loss_unchanged():
    model = RewardModel(**TINY_NET, seed=4)
    rng = np.random.default_rng(4)
    pairs = synthetic_pairs(rng, 6)
    swapped = [
        PreferencePair(
            pair_id=p.pair_id,
            source=p.source,
            first=p.second,
            second=p.first,
            choice="second" if p.choice == "first" else "first",
            annotator=p.annotator,
        )
        for p in pairs
    ]
    assert preference_loss(model, pairs) == pytest.approx(preference_loss(model, swapped), rel=1e-12)


def test_constant_shift_invariance_only_for_equal_lengths():
    rng = np.random.default_rng(5)
    model = RewardModel(**TINY_NET, seed=5)
    a, b = random_segment(rng, k=20), random_segment(rng, k=20)
    p_before = preference_probability(model, a, b)
    shifted = model.clone()
    shifted.net.trunk.biases[-1][...] += 0.37  # constant added to every step score
    assert preference_probability(shifted, a, b) == pytest.approx(p_before, abs=1e-9)
    # Unequal lengths: the shift no longer cancels.
    c = random_segment(rng, k=35)
    p_unequal_before = preference_probability(model, a, c)
    p_unequal_after = preference_probability(shifted, a, c)
    assert abs(p_unequal_after - p_unequal_before) > 1e-6


def test_cross_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    model = RewardModel(**TINY_NET, seed=6)
    pairs = synthetic_pairs(rng, 3)

    # Assemble the analytic gradient exactly as training does.
    from prefnav.rewardmodel import _pack, _sigmoid

    packed = _pack(pairs)
    scores, cache = model.net.forward_cached(packed.obs, packed.actions)
    grad = np.zeros_like(scores)
    for (fa, fb, sa, sb), y in zip(packed.slices, packed.labels):
        x = scores[fa:fb].sum() - scores[sa:sb].sum()
        dx = (float(_sigmoid(x)) - y) / len(packed.slices)
        grad[fa:fb] += dx
        grad[sa:sb] -= dx
    grads, _ = model.net.backward(cache, grad)

    params = model.net.params()
    probe = np.random.default_rng(7)
    eps = 1e-5
    for p, g in zip(params, grads):
        flat_p, flat_g = p.ravel(), g.ravel()
        for idx in probe.choice(flat_p.size, size=min(4, flat_p.size), replace=False):
            original = flat_p[idx]
            flat_p[idx] = original + eps
            up = preference_loss(model, pairs)
            flat_p[idx] = original - eps
            down = preference_loss(model, pairs)
            flat_p[idx] = original
            fd = (up - down) / (2 * eps)
            scale = max(abs(fd), abs(flat_g[idx]), 1e-6)
            assert abs(fd - flat_g[idx]) / scale < 1e-4


# -- training ---------------------------------------------------------------------

def test_single_pair_memorization():
    rng = np.random.default_rng(8)
    pairs = synthetic_pairs(rng, 1)
    model, _ = train_reward_model(
        pairs, epochs=60, lr=1e-3, seed=0, dtype=np.float64, **TINY_NET
    )
    assert evaluate_accuracy(model, pairs) == 1.0


def test_training_requires_labels():
    with pytest.raises(ValueError):
        train_reward_model([], epochs=1)
    rng = np.random.default_rng(9)
    unlabeled = [
        PreferencePair(pair_id="u", source="segment", first=random_segment(rng), second=random_segment(rng))
    ]
    with pytest.raises(ValueError):
        train_reward_model(unlabeled, epochs=1)


def test_skips_excluded_from_training():
    rng = np.random.default_rng(10)
    pairs = synthetic_pairs(rng, 6)
    skipped = [
        PreferencePair(
            pair_id="s", source="segment", first=random_segment(rng), second=random_segment(rng),
            choice="skip",
        )
    ]
    model, history = train_reward_model(
        pairs + skipped, epochs=2, lr=1e-4, seed=0, dtype=np.float64, **TINY_NET
    )
    assert model.metadata["n_pairs"] == 6


def test_normalization_fits_mean_zero_std_one():
    rng = np.random.default_rng(11)
    pairs = synthetic_pairs(rng, 10)
    obs = np.concatenate([p.first.observations for p in pairs])
    act = np.concatenate([p.first.actions for p in pairs])
    model, _ = train_reward_model(
        pairs, epochs=2, lr=1e-4, seed=1, norm_sample=(obs, act), dtype=np.float64, **TINY_NET
    )
    normalized = model.normalized(obs, act)
    assert abs(float(normalized.mean())) < 1e-6
    assert abs(float(normalized.std()) - 1.0) < 1e-6


def test_best_epoch_snapshot_restored():
    rng = np.random.default_rng(12)
    pairs = synthetic_pairs(rng, 30)
    model, history = train_reward_model(
        pairs, epochs=8, lr=1e-3, seed=2, dtype=np.float64, **TINY_NET
    )
    best = max(history, key=lambda row: row["accuracy"])
    assert model.metadata["best_epoch"] == best["epoch"] or (
        model.metadata["best_accuracy"] == pytest.approx(best["accuracy"])
    )


def test_learnable_signal_beats_chance():
    rng = np.random.default_rng(13)
    train_pairs = synthetic_pairs(rng, 60)
    test_pairs = synthetic_pairs(rng, 60)
    model, _ = train_reward_model(
        train_pairs, epochs=10, lr=1e-3, seed=3, dtype=np.float64, batch_pairs=1, **TINY_NET
    )
    assert evaluate_accuracy(model, test_pairs) > 0.8


def test_random_model_near_chance_on_balanced_labels():
    rng = np.random.default_rng(14)
    accs = []
    for seed in range(10):
        model = RewardModel(**TINY_NET, seed=100 + seed)
        pairs = synthetic_pairs(np.random.default_rng(seed), 40, label_by_min_dh=False)
        accs.append(evaluate_accuracy(model, pairs))
    # Untrained scores are label-independent: mean accuracy ~ 0.5.
    assert abs(float(np.mean(accs)) - 0.5) < 0.15


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(15)
    pairs = synthetic_pairs(rng, 5)
    model, _ = train_reward_model(pairs, epochs=2, lr=1e-4, seed=4, dtype=np.float64, **TINY_NET)
    path = tmp_path / "reward.npz"
    model.save(path)
    loaded = RewardModel.load(path)
    seg = random_segment(rng)
    assert loaded.item_return(seg) == pytest.approx(model.item_return(seg), rel=1e-12)
    assert loaded.norm_mean == model.norm_mean
    assert loaded.metadata["n_pairs"] == 5


def test_evaluate_accuracy_oracle_selfconsistency():
    # A model that scores exactly by -1/d_h reproduces the oracle on segments
    # ... replaced by direct construction: score = d_h per step is monotone
    # with min d_h only approximately; instead check the degenerate exact case
    # where each segment has constant d_h.
    rng = np.random.default_rng(16)

    class MinDistanceModel:
        def item_return(self, item):
            return float(item.observations[:, 32].min())

    pairs = []
    scene = make_scene()
    for i in range(25):
        a = random_segment(rng, scene=scene)
        b = random_segment(rng, scene=scene)
        a.observations[:, 32] = a.observations[0, 32]
        b.observations[:, 32] = b.observations[0, 32]
        object.__setattr__(a, "min_human_distance", float(a.observations[0, 32]))
        object.__setattr__(b, "min_human_distance", float(b.observations[0, 32]))
        choice = "first" if a.min_human_distance > b.min_human_distance else "second"
        pairs.append(
            PreferencePair(pair_id=f"o-{i}", source="segment", first=a, second=b, choice=choice)
        )
    hits = 0
    for p in pairs:
        fake = MinDistanceModel()
        prob = 1.0 / (1.0 + math.exp(fake.item_return(p.second) - fake.item_return(p.first)))
        hits += int((prob > 0.5) == (p.choice == "first"))
    assert hits == len(pairs)
