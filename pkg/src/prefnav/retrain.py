"""Reward-model retraining hook for the live labeling session."""

from __future__ import annotations

import numpy as np

from .config import ExperimentConfig
from .pipeline import raw_paths, reward_model_path
from .rewardmodel import train_reward_model
from .td3 import ReplayBuffer


def make_retrain_fn(config: ExperimentConfig, source: str, n_queries: int):
    """Build the callable the labeler's /retrain endpoint invokes.

    The resulting checkpoint uses the same container as oracle-trained models,
    so the align stage can consume it directly via its ``model_path`` override.
    """

    def retrain(labeled_pairs) -> dict:
        buffer_path = raw_paths(config)["buffer"]
        norm_sample = None
        if buffer_path.exists():
            buffer = ReplayBuffer.load(buffer_path)
            norm_sample = buffer.sample_states(
                10_000, np.random.default_rng(config.seed + 53)
            )
        model, history = train_reward_model(
            labeled_pairs,
            epochs=config.reward_epochs,
            lr=config.reward_lr,
            seed=config.seed,
            norm_sample=norm_sample,
            trunk_widths=config.trunk_widths,
            encoder_hidden=config.encoder_hidden,
        )
        out = reward_model_path(config, source, n_queries).with_suffix(".human.npz")
        out.parent.mkdir(parents=True, exist_ok=True)
        model.metadata.update(
            {"source": source, "n_queries": n_queries, "annotator": "human"}
        )
        model.save(out)
        return {
            "model": str(out),
            "n_pairs": len(labeled_pairs),
            "best_epoch": model.metadata.get("best_epoch"),
            "best_accuracy": model.metadata.get("best_accuracy"),
        }

    return retrain
