"""Offline preference alignment by reward relabeling, plus policy evaluation.

No environment interaction happens during alignment: batches are drawn from
the base policy's replay buffer and their rewards are blended on the fly with
the learned preference reward. The stored task rewards are never overwritten.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import sim2d
from .rewardmodel import RewardModel
from .td3 import Batch, ReplayBuffer, Td3Agent

BLEND_LAMBDA = 0.06


@dataclass(frozen=True)
class EvalReport:
    """Aggregate rollout metrics over a fixed scene suite (rates in percent)."""

    success_rate: float
    collision_rate: float
    timeout_rate: float
    mean_min_human_distance: float
    min_distance_samples: tuple[float, ...]
    n_scenes: int

    def to_json(self) -> dict:
        return {
            "success_rate": self.success_rate,
            "collision_rate": self.collision_rate,
            "timeout_rate": self.timeout_rate,
            "mean_min_human_distance": self.mean_min_human_distance,
            "min_distance_samples": list(self.min_distance_samples),
            "n_scenes": self.n_scenes,
        }


def blended_reward(
    model: RewardModel,
    obs: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    lam: float = BLEND_LAMBDA,
) -> np.ndarray:
    """``lam * normalized_model_reward + (1 - lam) * stored_reward``, vectorized."""
    return lam * model.normalized(obs, actions) + (1.0 - lam) * np.asarray(rewards, dtype=float)


def align_policy(
    base_agent: Td3Agent,
    buffer: ReplayBuffer,
    model: RewardModel,
    *,
    lam: float = BLEND_LAMBDA,
    epochs: int = 10,
    updates_per_epoch: int = 10_000,
    eval_scenes: list[sim2d.Scene],
    seed: int = 0,
    verbose: bool = False,
) -> tuple[Td3Agent, list[dict]]:
    """Batched offline updates on blended rewards; returns the best-epoch snapshot.

    The base agent is left untouched; after every epoch the working copy is
    evaluated on the fixed scene suite and the snapshot with the highest
    success rate is returned.
    """
    if buffer.count == 0:
        raise ValueError("alignment requires a non-empty replay buffer")
    agent = base_agent.clone()
    rng = np.random.default_rng(seed)

    def reward_fn(batch: Batch) -> np.ndarray:
        return blended_reward(model, batch.obs, batch.actions, batch.rewards, lam)

    best_rate, best_agent = -np.inf, agent.clone()
    history: list[dict] = []
    for epoch in range(1, epochs + 1):
        for _ in range(updates_per_epoch):
            agent.update(buffer, rng, reward_fn=reward_fn)
        rate = evaluate_policy(agent, eval_scenes).success_rate
        history.append({"epoch": epoch, "success_rate": rate, "selected": False})
        if verbose:
            print(f"[align] epoch {epoch}: success {rate:.1f}%")
        if rate > best_rate:
            best_rate = rate
            best_agent = agent.clone()
            for row in history:
                row["selected"] = False
            history[-1]["selected"] = True
    return best_agent, history


def evaluate_policy(agent, scenes: list[sim2d.Scene]) -> EvalReport:
    """Deterministic rollouts (no exploration noise) aggregated over a suite."""
    policy = agent.policy if isinstance(agent, Td3Agent) else agent
    successes = collisions = timeouts = 0
    samples: list[float] = []
    for scene in scenes:
        trajectory = sim2d.rollout(policy, scene)
        successes += trajectory.terminal == "goal"
        collisions += trajectory.collided()
        timeouts += trajectory.terminal in ("timeout_steps", "timeout_time")
        samples.append(trajectory.min_human_distance)
    n = len(scenes)
    return EvalReport(
        success_rate=100.0 * successes / n,
        collision_rate=100.0 * collisions / n,
        timeout_rate=100.0 * timeouts / n,
        mean_min_human_distance=float(np.mean(samples)),
        min_distance_samples=tuple(samples),
        n_scenes=n,
    )


def welch_t_test(samples_a, samples_b) -> float:
    """Two-sided unequal-variance t-test p-value for a difference of means."""
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("the test needs at least 2 samples per group")
    if a.var(ddof=1) == 0.0 and b.var(ddof=1) == 0.0:
        return 1.0 if a.mean() == b.mean() else 0.0
    return float(stats.ttest_ind(a, b, equal_var=False).pvalue)
