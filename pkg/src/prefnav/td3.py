"""Twin-delayed deterministic-policy-gradient agent and its training loop.

The same machinery backs the single base policy and every ensemble member;
the ensemble module only injects an extra actor-gradient hook.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import nn, sim2d
from .storage import load_arrays, load_record_stream, save_arrays, save_record_stream

REPLAY_CAPACITY = 1_000_000
DISCOUNT = 0.98


class Batch(NamedTuple):
    obs: np.ndarray        # (B, OBS_DIM) physical units
    actions: np.ndarray    # (B, 2) normalized
    rewards: np.ndarray    # (B,)
    next_obs: np.ndarray   # (B, OBS_DIM)
    done: np.ndarray       # (B,) 1.0 where the episode terminated


class ReplayBuffer:
    """Uniform-sampling ring buffer of transitions."""

    def __init__(self, capacity: int = REPLAY_CAPACITY, obs_dim: int = sim2d.OBS_DIM):
        self.capacity = int(capacity)
        self.obs_dim = obs_dim
        self.obs = np.zeros((self.capacity, obs_dim))
        self.actions = np.zeros((self.capacity, nn.ACTION_DIM))
        self.rewards = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.done = np.zeros(self.capacity)
        self.count = 0
        self._cursor = 0

    def __len__(self) -> int:
        return self.count

    def add(self, obs, action, reward, next_obs, done) -> None:
        i = self._cursor
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self._cursor = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform over stored entries, with replacement."""
        if self.count == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.count, size=n)
        return Batch(
            obs=self.obs[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_obs=self.next_obs[idx],
            done=self.done[idx],
        )

    def sample_states(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Uniform (observation, action) pairs, e.g. for normalization fitting."""
        idx = rng.integers(0, self.count, size=min(n, self.count))
        return self.obs[idx], self.actions[idx]

    def copy_from(self, other: "ReplayBuffer") -> None:
        """Replace contents with a full copy of another buffer's records."""
        n = min(other.count, self.capacity)
        self.obs[:n] = other.obs[:n]
        self.actions[:n] = other.actions[:n]
        self.rewards[:n] = other.rewards[:n]
        self.next_obs[:n] = other.next_obs[:n]
        self.done[:n] = other.done[:n]
        self.count = n
        self._cursor = n % self.capacity

    def save(self, path) -> None:
        n = self.count
        records = np.concatenate(
            [
                self.obs[:n],
                self.actions[:n],
                self.rewards[:n, None],
                self.next_obs[:n],
                self.done[:n, None],
            ],
            axis=1,
        )
        save_record_stream(
            path, records, {"kind": "replay", "obs_dim": self.obs_dim, "capacity": self.capacity}
        )

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        records, header = load_record_stream(path)
        buf = cls(capacity=header["capacity"], obs_dim=header["obs_dim"])
        d = header["obs_dim"]
        n = records.shape[0]
        buf.obs[:n] = records[:, :d]
        buf.actions[:n] = records[:, d : d + 2]
        buf.rewards[:n] = records[:, d + 2]
        buf.next_obs[:n] = records[:, d + 3 : 2 * d + 3]
        buf.done[:n] = records[:, 2 * d + 3]
        buf.count = n
        buf._cursor = n % buf.capacity
        return buf


@dataclass(frozen=True)
class Td3Config:
    discount: float = DISCOUNT
    tau: float = 0.005
    policy_delay: int = 2
    batch_size: int = 256
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    explore_noise: float = 0.1
    target_noise: float = 0.2
    target_noise_clip: float = 0.5
    warmup_steps: int = 1000
    trunk_widths: tuple[int, ...] = (400, 300)
    encoder_hidden: int = nn.ENCODER_HIDDEN
    buffer_capacity: int = REPLAY_CAPACITY
    dtype: str = "float32"  # training precision; float64 available for analysis


class Td3Agent:
    """Actor, twin critics, their targets, and the delayed update rule."""

    def __init__(self, config: Td3Config = Td3Config(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        kw = dict(
            trunk_widths=config.trunk_widths,
            encoder_hidden=config.encoder_hidden,
            dtype=np.dtype(config.dtype),
        )
        self.actor = nn.PolicyNet(rng=rng, **kw)
        self.critic1 = nn.QNet(rng=rng, **kw)
        self.critic2 = nn.QNet(rng=rng, **kw)
        self.actor_target = self.actor.clone()
        self.critic1_target = self.critic1.clone()
        self.critic2_target = self.critic2.clone()
        self.opt_actor = nn.AdamState()
        self.opt_critic1 = nn.AdamState()
        self.opt_critic2 = nn.AdamState()
        self.update_count = 0

    # -- acting ---------------------------------------------------------------

    def policy(self, obs: np.ndarray) -> np.ndarray:
        """Normalized deterministic action(s) for physical observation vector(s)."""
        return self.actor.forward(obs)

    def act(self, observation, explore: bool = False, rng: np.random.Generator | None = None) -> sim2d.Action:
        vec = (
            observation.as_vector()
            if isinstance(observation, sim2d.Observation)
            else np.asarray(observation, dtype=float)
        )
        a = self.actor.forward(vec)
        if explore:
            if rng is None:
                raise ValueError("explore=True requires an rng")
            a = np.clip(a + rng.normal(0.0, self.config.explore_noise, size=2), -1.0, 1.0)
        return sim2d.Action.from_normalized(a)

    # -- learning ---------------------------------------------------------------

    def update(
        self,
        buffer: ReplayBuffer,
        rng: np.random.Generator,
        batch_size: int | None = None,
        reward_fn: Callable[[Batch], np.ndarray] | None = None,
        actor_grad_hook: Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]] | None = None,
    ) -> dict:
        """One TD3 step; the actor and targets move every ``policy_delay`` calls.

        ``reward_fn(batch)`` may replace the stored rewards (reward relabeling);
        ``actor_grad_hook(obs, actions)`` may return an extra (loss, dLoss/dactions)
        term added to the actor objective.
        """
        cfg = self.config
        n = batch_size if batch_size is not None else cfg.batch_size
        if buffer.count < n:
            raise ValueError(f"buffer holds {buffer.count} < batch size {n}")
        batch = buffer.sample(n, rng)
        rewards = batch.rewards if reward_fn is None else reward_fn(batch)

        noise = np.clip(
            rng.normal(0.0, cfg.target_noise, size=(n, nn.ACTION_DIM)),
            -cfg.target_noise_clip,
            cfg.target_noise_clip,
        )
        next_actions = np.clip(self.actor_target.forward(batch.next_obs) + noise, -1.0, 1.0)
        q_next = np.minimum(
            self.critic1_target.forward(batch.next_obs, next_actions),
            self.critic2_target.forward(batch.next_obs, next_actions),
        )
        target = rewards + cfg.discount * (1.0 - batch.done) * q_next

        report = {}
        critic_loss = 0.0
        for critic, opt in ((self.critic1, self.opt_critic1), (self.critic2, self.opt_critic2)):
            q, cache = critic.forward_cached(batch.obs, batch.actions)
            diff = q - target
            critic_loss += float(np.mean(diff**2))
            grads, _ = critic.backward(cache, 2.0 * diff / n)
            nn.adam_step(critic.params(), grads, opt, cfg.critic_lr)
        report["critic_loss"] = critic_loss

        self.update_count += 1
        if self.update_count % cfg.policy_delay == 0:
            actions, actor_cache = self.actor.forward_cached(batch.obs)
            q_pi, q_cache = self.critic1.forward_cached(batch.obs, actions)
            _, grad_a = self.critic1.backward(q_cache, -np.ones(n) / n)
            actor_loss = -float(np.mean(q_pi))
            if actor_grad_hook is not None:
                extra_loss, extra_grad = actor_grad_hook(batch.obs, actions)
                actor_loss += extra_loss
                grad_a = grad_a + extra_grad
            actor_grads = self.actor.backward(actor_cache, grad_a)
            nn.adam_step(self.actor.params(), actor_grads, self.opt_actor, cfg.actor_lr)
            self._sync_targets()
            report["actor_loss"] = actor_loss
        return report

    def _sync_targets(self) -> None:
        tau = self.config.tau
        for live, target in (
            (self.actor, self.actor_target),
            (self.critic1, self.critic1_target),
            (self.critic2, self.critic2_target),
        ):
            for p, tp in zip(live.params(), target.params()):
                tp *= 1.0 - tau
                tp += tau * p

    # -- copying / persistence ---------------------------------------------------

    def clone(self) -> "Td3Agent":
        dup = Td3Agent.__new__(Td3Agent)
        dup.config = self.config
        for name in ("actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target"):
            setattr(dup, name, getattr(self, name).clone())
        for name in ("opt_actor", "opt_critic1", "opt_critic2"):
            src: nn.AdamState = getattr(self, name)
            setattr(
                dup,
                name,
                nn.AdamState(step=src.step, m=[a.copy() for a in src.m], v=[a.copy() for a in src.v]),
            )
        dup.update_count = self.update_count
        return dup

    def copy_weights_from(self, other: "Td3Agent") -> None:
        """Overwrite all network parameters (incl. targets) with another agent's."""
        for name in ("actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target"):
            for p, q in zip(getattr(self, name).params(), getattr(other, name).params()):
                p[...] = q

    _NET_NAMES = ("actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target")
    _OPT_NAMES = ("opt_actor", "opt_critic1", "opt_critic2")

    def save(self, path) -> None:
        arrays = {}
        for name in self._NET_NAMES:
            arrays.update(nn.net_arrays(getattr(self, name), prefix=f"{name}/"))
        opt_steps = {}
        for name in self._OPT_NAMES:
            state: nn.AdamState = getattr(self, name)
            opt_steps[name] = state.step
            for i, (m, v) in enumerate(zip(state.m, state.v)):
                arrays[f"{name}/m{i}"] = m
                arrays[f"{name}/v{i}"] = v
        meta = {
            "kind": "td3_agent",
            "config": {
                **{
                    k: v
                    for k, v in self.config.__dict__.items()
                    if k != "trunk_widths"
                },
                "trunk_widths": list(self.config.trunk_widths),
            },
            "update_count": self.update_count,
            "opt_steps": opt_steps,
        }
        save_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "Td3Agent":
        arrays, meta = load_arrays(path)
        cfg_doc = dict(meta["config"])
        cfg_doc["trunk_widths"] = tuple(cfg_doc["trunk_widths"])
        agent = cls(Td3Config(**cfg_doc), seed=0)
        for name in cls._NET_NAMES:
            nn.set_net_arrays(getattr(agent, name), arrays, prefix=f"{name}/")
        for name in cls._OPT_NAMES:
            state: nn.AdamState = getattr(agent, name)
            state.step = meta["opt_steps"][name]
            state.m, state.v = [], []
            i = 0
            while f"{name}/m{i}" in arrays:
                state.m.append(np.array(arrays[f"{name}/m{i}"]))
                state.v.append(np.array(arrays[f"{name}/v{i}"]))
                i += 1
        agent.update_count = meta["update_count"]
        return agent


# -- environment-interleaved training -----------------------------------------

@dataclass(frozen=True)
class ExplorationSchedule:
    """Episode-level exploration mix for sparse-goal training from scratch.

    The sparse goal reward is essentially never found by per-step uniform
    noise (a diffusive walk covers ~2 m per episode), so whole episodes are
    occasionally driven by a randomized cruising behavior that actually
    covers distance. The first ``warmup_episodes`` are always exploratory;
    afterwards the probability decays linearly from ``eps_start`` to
    ``eps_end`` over ``decay_steps`` environment steps.
    """

    warmup_episodes: int = 10
    eps_start: float = 0.3
    eps_end: float = 0.05
    decay_steps: int = 30_000

    def use_random_episode(self, rng: np.random.Generator, episode: int, step: int) -> bool:
        if episode < self.warmup_episodes:
            return True
        frac = min(step / max(self.decay_steps, 1), 1.0)
        eps = self.eps_start + (self.eps_end - self.eps_start) * frac
        return bool(rng.random() < eps)


class EnvRunner:
    """One agent's interaction stream: scenes, exploration, transition storage.

    Seed layout: ``seed`` drives action/update noise, ``seed + 0x5EED`` drives
    the scene sequence, so two runners with equal seeds replay identically.
    """

    def __init__(
        self,
        seed: int,
        scene_kwargs: dict | None = None,
        exploration: ExplorationSchedule | None = None,
    ):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.scene_rng = np.random.default_rng(self.seed + 0x5EED)
        self.scene_kwargs = dict(scene_kwargs or {})
        self.exploration = exploration
        self.episodes = 0
        self.total_steps = 0
        self.sim: sim2d.Simulator | None = None
        self.obs_vec: np.ndarray | None = None
        self._cruise: np.ndarray | None = None
        self._new_episode()

    def set_scene_kwargs(self, scene_kwargs: dict) -> None:
        """Applies from the next episode on (curriculum staging)."""
        self.scene_kwargs = dict(scene_kwargs)

    def _new_episode(self) -> None:
        scene_seed = int(self.scene_rng.integers(0, 2**31))
        scene = sim2d.sample_scene(scene_seed, **self.scene_kwargs)
        self.sim = sim2d.Simulator(scene)
        self.obs_vec = self.sim.reset().as_vector()
        self._cruise = None
        if self.exploration is not None and self.exploration.use_random_episode(
            self.rng, self.episodes, self.total_steps
        ):
            # Random cruising episode: forward speed with a gentle random arc.
            self._cruise = np.array(
                [self.rng.uniform(0.5, 1.0), self.rng.uniform(-0.25, 0.25)]
            )
        self.episodes += 1

    def step(self, agent: Td3Agent) -> tuple[np.ndarray, np.ndarray, float, np.ndarray, bool]:
        """Advance one environment step and return the stored transition."""
        if self._cruise is not None:
            a = np.clip(
                self._cruise + self.rng.uniform(-0.1, 0.1, size=nn.ACTION_DIM),
                -1.0,
                1.0,
            )
        else:
            a = np.clip(
                agent.policy(self.obs_vec)
                + self.rng.normal(0.0, agent.config.explore_noise, size=nn.ACTION_DIM),
                -1.0,
                1.0,
            )
        outcome = self.sim.step(sim2d.Action.from_normalized(a))
        next_vec = outcome.observation.as_vector()
        done = outcome.terminal != "none"
        transition = (self.obs_vec, a, outcome.reward, next_vec, done)
        self.total_steps += 1
        if done:
            self._new_episode()
        else:
            self.obs_vec = next_vec
        return transition


def eval_success(agent: Td3Agent, scenes: list[sim2d.Scene]) -> float:
    """Deterministic success rate of the agent over a scene suite."""
    if not scenes:
        return 0.0
    wins = sum(1 for s in scenes if sim2d.rollout(agent.policy, s).terminal == "goal")
    return wins / len(scenes)


def make_scene_suite(base_seed: int, n: int, scene_kwargs: dict | None = None) -> list[sim2d.Scene]:
    """Deterministic scene list in a seed range disjoint from training streams."""
    kwargs = dict(scene_kwargs or {})
    return [sim2d.sample_scene(2**31 + base_seed * 100_000 + i, **kwargs) for i in range(n)]


def goal_curriculum(goal_dist: tuple[float, float], stages: int = 4) -> list[tuple[float, float]]:
    """Goal-distance ladder ending at the target range.

    The sparse goal reward is only discoverable when goals start close
    (gamma^k discounting makes远 distant terminal rewards invisible), so scene
    sampling starts at 1-2 m and widens as the policy masters each stage.
    """
    lo_t, hi_t = goal_dist
    ladder = []
    for k in range(stages):
        f = k / (stages - 1) if stages > 1 else 1.0
        ladder.append((1.0 + f * (lo_t - 1.0), 2.0 + f * (hi_t - 2.0)))
    ladder[-1] = (lo_t, hi_t)
    return ladder


def train_raw(
    seed: int,
    budget: int,
    config: Td3Config = Td3Config(),
    scene_kwargs: dict | None = None,
    *,
    eval_scenes: list[sim2d.Scene] | None = None,
    eval_every: int = 2500,
    success_target: float = 0.9,
    stage_advance: float = 0.8,
    agent: Td3Agent | None = None,
    buffer: ReplayBuffer | None = None,
    verbose: bool = False,
) -> tuple[Td3Agent, ReplayBuffer, list[dict]]:
    """Train the base policy; returns the agent, its replay buffer, and history.

    Scene sampling follows a goal-distance curriculum; evaluation always runs
    on the final-stage distribution (``eval_scenes``) and training stops early
    once it reaches ``success_target``. ``budget == 0`` returns the untouched
    agent and an empty buffer.
    """
    scene_kwargs = dict(scene_kwargs or {})
    agent = agent if agent is not None else Td3Agent(config, seed=seed)
    buffer = buffer if buffer is not None else ReplayBuffer(config.buffer_capacity)
    exploration = ExplorationSchedule(decay_steps=max(budget // 2, 1))

    ladder = goal_curriculum(scene_kwargs.get("goal_dist", (2.0, 10.0)))
    stage = 0
    stage_scenes = [
        make_scene_suite(seed + 311 + i, 20, {**scene_kwargs, "goal_dist": rung})
        for i, rung in enumerate(ladder)
    ]
    runner = EnvRunner(
        seed, {**scene_kwargs, "goal_dist": ladder[0]}, exploration=exploration
    )
    history: list[dict] = []
    for step in range(budget):
        transition = runner.step(agent)
        buffer.add(*transition)
        if step >= config.warmup_steps and buffer.count >= config.batch_size:
            agent.update(buffer, runner.rng)
        if (step + 1) % eval_every == 0:
            stage_rate = eval_success(agent, stage_scenes[stage])
            final_rate = (
                eval_success(agent, eval_scenes)
                if eval_scenes and stage == len(ladder) - 1
                else float("nan")
            )
            history.append(
                {
                    "step": step + 1,
                    "stage": stage,
                    "goal_lo": ladder[stage][0],
                    "goal_hi": ladder[stage][1],
                    "stage_success": stage_rate,
                    "success_rate": final_rate,
                }
            )
            if verbose:
                print(
                    f"[train_raw] step {step + 1}: stage {stage} "
                    f"({ladder[stage][0]:.1f}-{ladder[stage][1]:.1f} m) "
                    f"success {stage_rate:.2f} final {final_rate:.2f}"
                )
            if stage < len(ladder) - 1 and stage_rate >= stage_advance:
                stage += 1
                runner.set_scene_kwargs({**scene_kwargs, "goal_dist": ladder[stage]})
            elif stage == len(ladder) - 1 and eval_scenes and final_rate >= success_target:
                break
    return agent, buffer, history
