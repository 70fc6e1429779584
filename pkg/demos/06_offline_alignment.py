"""Align the base policy offline by relabeling its replay buffer.

No new environment steps: batches sample the existing buffer and blend the
stored task reward with the learned preference reward,
r* = lambda * R_hat + (1 - lambda) * r with lambda = 0.06. The stored rewards
are never overwritten. Needs demos/02 and 05 artifacts.

Run:  python3 demos/06_offline_alignment.py
"""

from pathlib import Path

import numpy as np

from prefnav import align, td3
from prefnav.rewardmodel import RewardModel

ARTIFACTS = Path(__file__).parent / "artifacts"
scene_kwargs = dict(n_obstacles=0, arena=10.0, goal_dist=(2.0, 6.0))

raw = td3.Td3Agent.load(ARTIFACTS / "raw-agent.npz")
buffer = td3.ReplayBuffer.load(ARTIFACTS / "raw-buffer.bin")
model = RewardModel.load(ARTIFACTS / "reward-ensemble-15.npz")

rewards_before = buffer.rewards[: buffer.count].copy()

aligned, history = align.align_policy(
    raw,
    buffer,
    model,
    lam=0.06,
    epochs=5,
    updates_per_epoch=10_000,
    eval_scenes=td3.make_scene_suite(555, 20, scene_kwargs),
    seed=7,
    verbose=True,
)
assert np.array_equal(buffer.rewards[: buffer.count], rewards_before)  # preserved
selected = [row for row in history if row["selected"]][0]
print("selected epoch:", selected["epoch"], "success:", selected["success_rate"])

# Shared-scene comparison: same 100 scenes for both policies.
scenes = td3.make_scene_suite(0, 100, scene_kwargs)
report_raw = align.evaluate_policy(raw, scenes)
report_aligned = align.evaluate_policy(aligned, scenes)
print("raw:     SR %.0f%%  CR %.0f%%  TR %.0f%%  min(d_h) %.2f m" % (
    report_raw.success_rate, report_raw.collision_rate, report_raw.timeout_rate,
    report_raw.mean_min_human_distance))
print("aligned: SR %.0f%%  CR %.0f%%  TR %.0f%%  min(d_h) %.2f m" % (
    report_aligned.success_rate, report_aligned.collision_rate, report_aligned.timeout_rate,
    report_aligned.mean_min_human_distance))
p = align.welch_t_test(report_aligned.min_distance_samples, report_raw.min_distance_samples)
print("two-sided Welch p-value for the min(d_h) shift:", p)

aligned.save(ARTIFACTS / "aligned-ensemble-15.npz")
print("saved:", ARTIFACTS / "aligned-ensemble-15.npz")
