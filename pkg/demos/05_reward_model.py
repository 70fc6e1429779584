"""Fit the pairwise preference reward model and measure held-out accuracy.

The model scores single (state, action) steps; an item's return is the sum of
its step scores and preferences follow a logistic model on return gaps. It
shares the critic architecture. Needs demos/02 and 04 artifacts.

Run:  python3 demos/05_reward_model.py
"""

from pathlib import Path

import numpy as np

from prefnav import querygen, td3
from prefnav.rewardmodel import evaluate_accuracy, preference_probability, train_reward_model

ARTIFACTS = Path(__file__).parent / "artifacts"

pairs = querygen.load_pairs(ARTIFACTS / "queries-ensemble-15.jsonl")
buffer = td3.ReplayBuffer.load(ARTIFACTS / "raw-buffer.bin")

# Output normalization is fitted on a 10k-state sample of the base policy's
# replay buffer after training.
norm_sample = buffer.sample_states(10_000, np.random.default_rng(53))

model, history = train_reward_model(
    pairs,
    epochs=10,
    lr=1e-3,
    seed=0,
    norm_sample=norm_sample,
    trunk_widths=(64, 64),
)
for row in history:
    print("epoch %2d: loss %.3f  %s accuracy %.2f" % (row["epoch"], row["loss"], row["split"], row["accuracy"]))
print("best epoch:", model.metadata["best_epoch"], "accuracy:", model.metadata["best_accuracy"])

# The fitted model reproduces the oracle's comparisons it was trained on:
sample = pairs[0]
print(
    "P[first > second] = %.3f, oracle said %r"
    % (preference_probability(model, sample.first, sample.second), sample.choice)
)

# Cross-validation against the segment dataset (different query style):
segments = querygen.load_pairs(ARTIFACTS / "queries-segment-15.jsonl")
print("accuracy on segment queries:", evaluate_accuracy(model, segments))

model.save(ARTIFACTS / "reward-ensemble-15.npz")
print("saved:", ARTIFACTS / "reward-ensemble-15.npz")
