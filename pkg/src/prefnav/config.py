"""Experiment configuration: published defaults plus a small-scale desk preset."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .ensemble import EnsembleConfig
from .td3 import Td3Config


@dataclass(frozen=True)
class ExperimentConfig:
    """All tunable constants of the pipeline.

    Defaults reproduce the published parameter table exactly. The "desk"
    preset shrinks only the training horizons, network widths, and scene
    counts so the full pipeline runs on a laptop; reward and sensor constants
    are never touched by presets (they live in :mod:`prefnav.sim2d`).
    """

    # Published parameter table.
    discount: float = 0.98
    ensemble_train_steps: int = 25_000
    buffer_capacity: int = 1_000_000
    pooled_rays: int = 30
    reward_goal: float = 20.0
    reward_collision: float = -1.2
    reward_timeout: float = -20.0
    reward_loop: float = -2.0
    n_members: int = 4
    kappa: float = 0.0625
    dist_slope: float = 0.125
    dist_intercept: float = 0.25
    segment_length: int = 20
    blend_lambda: float = 0.06

    # Scale preset bookkeeping.
    scale: str = "paper"
    seed: int = 0
    root: Path = Path("experiments/default")

    # Networks.
    trunk_widths: tuple[int, ...] = (400, 300)
    encoder_hidden: int = 64

    # Base-policy training.
    raw_train_steps: int = 150_000
    raw_success_target: float = 0.9

    # Scenes.
    n_obstacles: int = 4
    arena: float = 12.0
    goal_dist: tuple[float, float] = (2.0, 10.0)
    eval_scenes: int = 100

    # Reward model and alignment.
    reward_epochs: int = 10
    reward_lr: float = 1e-4
    alignment_epochs: int = 10
    alignment_updates: int = 10_000
    query_pool_scenes: int = 100

    @classmethod
    def desk(cls, seed: int = 0, root: Path | str = Path("experiments/desk"), **overrides) -> "ExperimentConfig":
        """Laptop-scale preset: smaller nets, shorter training, fewer scenes."""
        values = dict(
            scale="desk",
            seed=seed,
            root=Path(root),
            trunk_widths=(64, 64),
            raw_train_steps=60_000,
            n_members=2,
            ensemble_train_steps=5_000,
            n_obstacles=0,
            arena=10.0,
            goal_dist=(2.0, 6.0),
            eval_scenes=20,
            query_pool_scenes=40,
        )
        values.update(overrides)
        return cls(**values)

    @classmethod
    def paper(cls, seed: int = 0, root: Path | str = Path("experiments/paper"), **overrides) -> "ExperimentConfig":
        return cls(seed=seed, root=Path(root), **overrides)

    def td3(self) -> Td3Config:
        return Td3Config(
            discount=self.discount,
            trunk_widths=self.trunk_widths,
            encoder_hidden=self.encoder_hidden,
            buffer_capacity=self.buffer_capacity,
        )

    def ensemble(self) -> EnsembleConfig:
        return EnsembleConfig(
            n_members=self.n_members,
            kappa=self.kappa,
            dist_slope=self.dist_slope,
            dist_intercept=self.dist_intercept,
            train_steps=self.ensemble_train_steps,
        )

    def scene_kwargs(self) -> dict:
        return {
            "n_obstacles": self.n_obstacles,
            "arena": self.arena,
            "goal_dist": self.goal_dist,
        }

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["root"] = str(self.root)
        doc["trunk_widths"] = list(self.trunk_widths)
        doc["goal_dist"] = list(self.goal_dist)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        doc["root"] = Path(doc["root"])
        doc["trunk_widths"] = tuple(doc["trunk_widths"])
        doc["goal_dist"] = tuple(doc["goal_dist"])
        return cls(**doc)

    def with_root(self, root: Path | str) -> "ExperimentConfig":
        return replace(self, root=Path(root))
