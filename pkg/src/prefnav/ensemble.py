"""Behavior-diverse policy ensemble trained with goal-modulated diversity pressure.

Each member is a full TD3 agent with its own environment stream and replay
buffer, warm-started from the base policy. Diversity comes from a penalty on
pairwise action agreement, scaled down near the goal so members converge on
goal-reaching while diverging on the way there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn, sim2d
from .td3 import EnvRunner, ReplayBuffer, Td3Agent, eval_success

GOAL_DIST_INDEX = sim2d.POOLED_RAYS  # column of d_g in an observation vector


@dataclass(frozen=True)
class EnsembleConfig:
    """Diversity-regularization constants and the training horizon."""

    n_members: int = 4
    kappa: float = 0.0625
    dist_slope: float = 0.125        # 1/8 per meter
    dist_intercept: float = 0.25
    train_steps: int = 25_000
    alpha_clamp_max: float = 1.5     # value of the ramp at the 10 m max goal distance

    @property
    def kappa_tilde(self) -> float:
        """Scale normalized by the squared action dimension (|A|^2 = 4)."""
        return self.kappa / nn.ACTION_DIM**2

    def alpha_dist(self, d_goal):
        """Goal-distance modulation: linear ramp, clamped to its own range."""
        raw = self.dist_slope * np.asarray(d_goal, dtype=float) + self.dist_intercept
        return np.clip(raw, self.dist_intercept, self.alpha_clamp_max)


def gmdr_loss(
    member_index: int,
    actions: np.ndarray,
    d_goal,
    config: EnsembleConfig,
) -> float | np.ndarray:
    """Diversity penalty for one member given every member's action.

    ``actions`` is (n_members, 2) for a single state or (n_members, B, 2) for a
    batch; returns a scalar or a per-element (B,) vector (callers average).
    The value is ``-kappa_tilde * alpha_dist(d_g) * sum_{j != i} |a_i - a_j|^2``,
    always <= 0, and 0 exactly when all members agree.
    """
    actions = np.asarray(actions, dtype=float)
    if not 0 <= member_index < actions.shape[0]:
        raise IndexError(f"member index {member_index} out of range")
    single = actions.ndim == 2
    stack = actions[:, None, :] if single else actions
    diffs = stack[member_index][None, :, :] - stack  # (n_members, B, 2)
    sq_sum = np.einsum("mbk,mbk->b", diffs, diffs)   # j == i contributes 0
    alpha = config.alpha_dist(d_goal)
    loss = -config.kappa_tilde * alpha * sq_sum
    return float(loss[0]) if single else loss


@dataclass
class Ensemble:
    """The member agents plus their private replay buffers.

    Buffers are empty when an ensemble is loaded from checkpoints for
    inference-only use (query generation, diversity measurement).
    """

    members: list[Td3Agent]
    buffers: list[ReplayBuffer] = field(default_factory=list)
    config: EnsembleConfig = field(default_factory=EnsembleConfig)

    def __len__(self) -> int:
        return len(self.members)

    def policies(self) -> list:
        return [m.policy for m in self.members]


def warm_start(
    raw_agent: Td3Agent,
    raw_buffer: ReplayBuffer,
    config: EnsembleConfig,
) -> Ensemble:
    """Clone the base policy into every member and copy its replay buffer."""
    if raw_buffer.count == 0:
        raise ValueError("warm start requires a non-empty base replay buffer")
    members = [raw_agent.clone() for _ in range(config.n_members)]
    buffers = []
    for _ in range(config.n_members):
        buf = ReplayBuffer(raw_buffer.capacity, raw_buffer.obs_dim)
        buf.copy_from(raw_buffer)
        buffers.append(buf)
    return Ensemble(members=members, buffers=buffers, config=config)


def _member_hook(ensemble: Ensemble, member_index: int):
    """Actor-gradient hook adding the diversity term for one member.

    Other members' actions are treated as constants; gradients flow only into
    the updating actor. Returns None when the penalty is identically zero.
    """
    config = ensemble.config
    if config.kappa_tilde == 0.0 or len(ensemble) == 1:
        return None

    others = [m for j, m in enumerate(ensemble.members) if j != member_index]

    def hook(obs_batch: np.ndarray, actions: np.ndarray) -> tuple[float, np.ndarray]:
        n = actions.shape[0]
        other_actions = np.stack([m.actor.forward(obs_batch) for m in others])
        diffs = actions[None, :, :] - other_actions          # (n_members-1, B, 2)
        sq_sum = np.einsum("mbk,mbk->b", diffs, diffs)
        alpha = config.alpha_dist(obs_batch[:, GOAL_DIST_INDEX])
        scale = -config.kappa_tilde * alpha
        loss = float(np.mean(scale * sq_sum))
        grad = (scale[:, None] * 2.0 * diffs.sum(axis=0)) / n
        return loss, grad

    return hook


def ensemble_actor_loss(
    ensemble: Ensemble,
    member_index: int,
    obs_batch: np.ndarray,
) -> float:
    """Actor objective of one member on a batch: TD3 term plus mean diversity term.

    With ``kappa == 0`` or a single member this equals the plain TD3 actor loss
    exactly (the diversity term vanishes identically).
    """
    member = ensemble.members[member_index]
    actions = member.actor.forward(obs_batch)
    base = -float(np.mean(member.critic1.forward(obs_batch, actions)))
    hook = _member_hook(ensemble, member_index)
    if hook is None:
        return base
    extra, _ = hook(obs_batch, actions)
    return base + extra


def action_diversity(ensemble: Ensemble, states: np.ndarray) -> float:
    """Mean pairwise squared action disagreement over states and members."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] < 1:
        raise ValueError("diversity needs at least one state")
    actions = np.stack([m.actor.forward(states) for m in ensemble.members])  # (M, B, 2)
    diffs = actions[:, None, :, :] - actions[None, :, :, :]                  # (M, M, B, 2)
    per_member = np.einsum("ijbk,ijbk->ib", diffs, diffs)                    # sum over j, dims
    return float(per_member.mean())


def train_ensemble(
    ensemble: Ensemble,
    base_seed: int,
    scene_kwargs: dict | None = None,
    *,
    eval_scenes: list[sim2d.Scene] | None = None,
    checkpoint_every: int = 2500,
    diversity_states: int = 1000,
    verbose: bool = False,
) -> list[dict]:
    """Train all members round-robin for ``config.train_steps`` environment steps.

    Member ``i`` draws its own scene and noise streams from ``base_seed + i``.
    Returns per-checkpoint history rows (step, member, diversity, success_rate).
    """
    config = ensemble.config
    runners = [EnvRunner(base_seed + i, scene_kwargs) for i in range(len(ensemble))]
    hooks = [_member_hook(ensemble, i) for i in range(len(ensemble))]
    # Identically seeded (but independent) update-noise streams per member:
    # common random numbers keep kappa=0 members functionally aligned, so
    # measured diversity reflects the regularizer rather than sampler noise.
    update_rngs = [np.random.default_rng(base_seed + 0xBEEF) for _ in ensemble.members]
    history: list[dict] = []
    measure_rng = np.random.default_rng(base_seed + 0xD1CE)

    for step in range(config.train_steps):
        for i, (member, buffer, runner) in enumerate(
            zip(ensemble.members, ensemble.buffers, runners)
        ):
            transition = runner.step(member)
            buffer.add(*transition)
            member.update(buffer, update_rngs[i], actor_grad_hook=hooks[i])
        if (step + 1) % checkpoint_every == 0 or step + 1 == config.train_steps:
            states, _ = ensemble.buffers[0].sample_states(diversity_states, measure_rng)
            diversity = action_diversity(ensemble, states)
            for i, member in enumerate(ensemble.members):
                rate = eval_success(member, eval_scenes) if eval_scenes else float("nan")
                history.append(
                    {
                        "step": step + 1,
                        "member": i,
                        "diversity": diversity,
                        "success_rate": rate,
                    }
                )
            if verbose:
                print(f"[train_ensemble] step {step + 1}: diversity {diversity:.3f}")
    return history


def save_ensemble(directory, ensemble: Ensemble) -> None:
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, member in enumerate(ensemble.members):
        member.save(directory / f"member{i}.npz")
    import json

    (directory / "ensemble.json").write_text(
        json.dumps(
            {
                "n_members": ensemble.config.n_members,
                "kappa": ensemble.config.kappa,
                "dist_slope": ensemble.config.dist_slope,
                "dist_intercept": ensemble.config.dist_intercept,
                "train_steps": ensemble.config.train_steps,
                "alpha_clamp_max": ensemble.config.alpha_clamp_max,
            },
            indent=2,
        )
    )


def load_ensemble(directory) -> Ensemble:
    import json
    from pathlib import Path

    directory = Path(directory)
    doc = json.loads((directory / "ensemble.json").read_text())
    config = EnsembleConfig(**doc)
    members = [
        Td3Agent.load(directory / f"member{i}.npz") for i in range(config.n_members)
    ]
    return Ensemble(members=members, buffers=[], config=config)
