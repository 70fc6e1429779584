"""Alignment tests: reward blending, buffer preservation, evaluation, t-test."""

import math

import numpy as np
import pytest

from prefnav import align, sim2d
from prefnav.align import EvalReport, blended_reward, evaluate_policy, welch_t_test
from prefnav.rewardmodel import RewardModel
from prefnav.td3 import ReplayBuffer, Td3Agent, Td3Config

TINY = Td3Config(trunk_widths=(16, 12), encoder_hidden=8, buffer_capacity=2000, dtype="float64")
TINY_NET = dict(trunk_widths=(16, 12), encoder_hidden=8)
SCENES = {"n_obstacles": 0, "arena": 8.0, "goal_dist": (2.0, 4.0)}


def random_obs(rng, n=1):
    lidar = rng.uniform(0, 6, size=(n, 30))
    rest = np.stack(
        [rng.uniform(0, 10, n), rng.uniform(-np.pi, np.pi, n), rng.uniform(0, 10, n), rng.uniform(-np.pi, np.pi, n)],
        axis=1,
    )
    return np.concatenate([lidar, rest], axis=1)


def fitted_model(seed=0):
    model = RewardModel(**TINY_NET, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    model.fit_normalization(random_obs(rng, 500), rng.uniform(-1, 1, (500, 2)))
    return model


def filled_buffer(rng, n=400):
    buf = ReplayBuffer(2000)
    for _ in range(n):
        buf.add(random_obs(rng)[0], rng.uniform(-1, 1, 2), rng.normal(), random_obs(rng)[0], rng.random() < 0.02)
    return buf


# -- blending -----------------------------------------------------------------------

def test_blend_lambda_zero_identity():
    model = fitted_model()
    rng = np.random.default_rng(1)
    obs, act = random_obs(rng, 10), rng.uniform(-1, 1, (10, 2))
    r = rng.normal(size=10)
    assert np.array_equal(blended_reward(model, obs, act, r, 0.0), r)


def test_blend_lambda_one_full_replacement():
    model = fitted_model()
    rng = np.random.default_rng(2)
    obs, act = random_obs(rng, 10), rng.uniform(-1, 1, (10, 2))
    r = rng.normal(size=10)
    out = blended_reward(model, obs, act, r, 1.0)
    assert np.allclose(out, model.normalized(obs, act))


def test_blend_paper_value_arithmetic():
    # lambda = 0.06, normalized model output 1.0, task reward 0 -> 0.06.
    model = fitted_model()
    rng = np.random.default_rng(3)
    obs, act = random_obs(rng, 1), rng.uniform(-1, 1, (1, 2))
    raw = model.score(obs, act)[0]
    model.norm_mean = raw - 1.0  # force normalized output exactly 1.0
    model.norm_std = 1.0
    out = blended_reward(model, obs, act, np.zeros(1), 0.06)
    assert out[0] == pytest.approx(0.06, rel=1e-12)


def test_blend_affine_in_lambda():
    model = fitted_model()
    rng = np.random.default_rng(4)
    obs, act = random_obs(rng, 50), rng.uniform(-1, 1, (50, 2))
    r = rng.normal(size=50)
    rhat = model.normalized(obs, act)
    for lam in (0.0, 0.06, 0.3, 0.77, 1.0):
        expected = r + lam * (rhat - r)
        assert np.allclose(blended_reward(model, obs, act, r, lam), expected, atol=1e-12)


# -- alignment loop ---------------------------------------------------------------

def test_align_requires_buffer():
    with pytest.raises(ValueError):
        align.align_policy(
            Td3Agent(TINY, seed=0), ReplayBuffer(10), fitted_model(),
            epochs=1, updates_per_epoch=1, eval_scenes=[],
        )


def test_align_preserves_buffer_rewards_and_base_agent():
    rng = np.random.default_rng(5)
    buf = filled_buffer(rng)
    original_rewards = buf.rewards[: buf.count].copy()
    base = Td3Agent(TINY, seed=6)
    base_params = [p.copy() for p in base.actor.params()]
    scenes = [sim2d.sample_scene(2**31 + i, **SCENES) for i in range(3)]
    aligned, history = align.align_policy(
        base, buf, fitted_model(), lam=0.06, epochs=2, updates_per_epoch=30,
        eval_scenes=scenes, seed=0,
    )
    assert np.array_equal(buf.rewards[: buf.count], original_rewards)
    for p, q in zip(base.actor.params(), base_params):
        assert np.array_equal(p, q)  # base agent untouched
    moved = any(
        not np.array_equal(p, q) for p, q in zip(aligned.actor.params(), base_params)
    )
    assert moved
    assert len(history) == 2
    assert sum(row["selected"] for row in history) == 1


def test_align_selects_best_epoch():
    rng = np.random.default_rng(7)
    buf = filled_buffer(rng)
    scenes = [sim2d.sample_scene(2**31 + 50 + i, **SCENES) for i in range(2)]
    aligned, history = align.align_policy(
        Td3Agent(TINY, seed=8), buf, fitted_model(), epochs=3, updates_per_epoch=10,
        eval_scenes=scenes, seed=1,
    )
    best = max(history, key=lambda r: r["success_rate"])
    selected = [r for r in history if r["selected"]][0]
    assert selected["success_rate"] == best["success_rate"]


# -- evaluation ---------------------------------------------------------------------

def test_never_moving_policy_times_out_everywhere():
    scenes = [sim2d.sample_scene(2**31 + 100 + i, **SCENES) for i in range(5)]
    report = evaluate_policy(lambda obs: np.array([-1.0, 0.0]), scenes)
    assert report.success_rate == 0.0
    assert report.timeout_rate == 100.0
    assert report.n_scenes == 5


def test_evaluation_deterministic():
    scenes = [sim2d.sample_scene(2**31 + 200 + i, **SCENES) for i in range(4)]
    agent = Td3Agent(TINY, seed=9)
    r1 = evaluate_policy(agent, scenes)
    r2 = evaluate_policy(agent, scenes)
    assert r1 == r2


def test_goal_seeker_summary():
    def seeker(obs):
        return np.array([1.0, np.clip(obs[31] / np.pi * 4.0, -1, 1)])

    scenes = [sim2d.sample_scene(2**31 + 300 + i, **SCENES) for i in range(10)]
    report = evaluate_policy(seeker, scenes)
    assert report.success_rate >= 90.0
    assert report.success_rate + report.timeout_rate <= 100.0
    assert len(report.min_distance_samples) == 10
    assert report.mean_min_human_distance == pytest.approx(
        float(np.mean(report.min_distance_samples))
    )


# -- Welch test ------------------------------------------------------------------------

def welch_p_by_numeric_integration(a, b):
    """Independent oracle: t statistic + numeric integration of the t density."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    va, vb = a.var(ddof=1), b.var(ddof=1)
    na, nb = len(a), len(b)
    se2 = va / na + vb / nb
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))

    def t_pdf(x):
        return math.exp(
            math.lgamma((df + 1) / 2)
            - math.lgamma(df / 2)
            - 0.5 * math.log(df * math.pi)
            - (df + 1) / 2 * math.log1p(x * x / df)
        )

    # Simpson integration of the two-sided tail mass.
    hi = abs(t)
    xs = np.linspace(-hi, hi, 20001)
    ys = np.array([t_pdf(x) for x in xs])
    inner = float(np.trapezoid(ys, xs))
    return 1.0 - inner


def test_welch_identical_samples_p_one():
    a = [1.0, 2.0, 3.0, 4.0]
    assert welch_t_test(a, a) == pytest.approx(1.0)


def test_welch_degenerate_zero_variance():
    assert welch_t_test([2.0, 2.0, 2.0], [2.0, 2.0, 2.0]) == 1.0
    assert welch_t_test([2.0, 2.0, 2.0], [3.0, 3.0, 3.0]) == 0.0


def test_welch_clearly_separated_distributions():
    rng = np.random.default_rng(10)
    a = rng.normal(3.2, 0.1, size=100)
    b = rng.normal(1.2, 0.1, size=100)
    assert welch_t_test(a, b) < 1e-3


def test_welch_symmetric():
    rng = np.random.default_rng(11)
    a = rng.normal(0, 1, size=30)
    b = rng.normal(0.5, 2, size=40)
    assert welch_t_test(a, b) == pytest.approx(welch_t_test(b, a), rel=1e-12)


def test_welch_matches_numeric_integration_oracle():
    rng = np.random.default_rng(12)
    for _ in range(200):
        na, nb = int(rng.integers(5, 40)), int(rng.integers(5, 40))
        a = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2), size=na)
        b = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2), size=nb)
        p = welch_t_test(a, b)
        oracle = welch_p_by_numeric_integration(a, b)
        assert p == pytest.approx(oracle, abs=2e-4)


def test_welch_needs_two_samples():
    with pytest.raises(ValueError):
        welch_t_test([1.0], [1.0, 2.0])


def test_eval_report_json_round_trip():
    report = EvalReport(90.0, 5.0, 10.0, 2.5, (2.0, 3.0), 2)
    doc = report.to_json()
    assert doc["success_rate"] == 90.0
    assert doc["min_distance_samples"] == [2.0, 3.0]
