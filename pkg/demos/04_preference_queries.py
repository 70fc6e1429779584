"""Generate preference queries two ways and label them with the oracle.

Ensemble queries: all members roll out on the *same* scene; flawed rollouts
(collision or self-intersection) are filtered and one clean pair is kept per
scene. Segment baseline: fixed-length snippets drawn uniformly from base-
policy rollouts on randomized scenes. The simulated oracle prefers the item
whose minimum distance to the human is larger. Needs demos/02 and 03.

Run:  python3 demos/04_preference_queries.py
"""

import itertools
from pathlib import Path

import numpy as np

from prefnav import ensemble as ens
from prefnav import querygen, td3

ARTIFACTS = Path(__file__).parent / "artifacts"
scene_kwargs = dict(n_obstacles=0, arena=10.0, goal_dist=(2.0, 6.0))

group = ens.load_ensemble(ARTIFACTS / "ensemble")
raw = td3.Td3Agent.load(ARTIFACTS / "raw-agent.npz")

ensemble_pairs = querygen.generate_ensemble_queries(
    group,
    itertools.count(3_000_000_000),
    n_queries=15,
    rng=np.random.default_rng(17),
    scene_kwargs=scene_kwargs,
)
print("ensemble pairs:", len(ensemble_pairs))
p = ensemble_pairs[0]
print(
    "  pair 0: scene", p.scene_id,
    "min d_h %.2f vs %.2f" % (p.first.min_human_distance, p.second.min_human_distance),
)

segment_pairs = querygen.generate_segment_queries(
    raw.policy,
    itertools.count(3_500_000_000),
    n_queries=15,
    rng=np.random.default_rng(18),
    pool_scenes=30,
    scene_kwargs=scene_kwargs,
)
print("segment pairs:", len(segment_pairs), " (each side is k=20 steps)")

labeled_ens = querygen.oracle_label_all(ensemble_pairs, seed=31)
labeled_seg = querygen.oracle_label_all(segment_pairs, seed=31)
firsts = sum(1 for q in labeled_ens if q.choice == "first")
print(f"oracle labels on ensemble pairs: {firsts} x first, {len(labeled_ens) - firsts} x second")

querygen.save_pairs(ARTIFACTS / "queries-ensemble-15.jsonl", labeled_ens)
querygen.save_pairs(ARTIFACTS / "queries-segment-15.jsonl", labeled_seg)
print("saved JSONL datasets to", ARTIFACTS)
