"""Train the base navigation policy at desk scale and save its artifacts.

The sparse-reward task is learned with a goal-distance curriculum plus
episode-level exploration. A few minutes on a laptop reaches >= 80-100%
success on held-out scenes; artifacts land in demos/artifacts/.

Run:  python3 demos/02_train_base_policy.py
"""

import time
from pathlib import Path

from prefnav import td3

ARTIFACTS = Path(__file__).parent / "artifacts"
ARTIFACTS.mkdir(exist_ok=True)

scene_kwargs = dict(n_obstacles=0, arena=10.0, goal_dist=(2.0, 6.0))
config = td3.Td3Config(trunk_widths=(64, 64))

# Held-out scenes come from a seed range disjoint from all training streams.
eval_scenes = td3.make_scene_suite(0, 20, scene_kwargs)

start = time.time()
agent, buffer, history = td3.train_raw(
    seed=0,
    budget=60_000,
    config=config,
    scene_kwargs=scene_kwargs,
    eval_scenes=eval_scenes,
    success_target=0.95,
    verbose=True,
)
print(f"trained in {(time.time() - start) / 60:.1f} min over {len(history)} checkpoints")

held_out = td3.make_scene_suite(99, 100, scene_kwargs)
print("held-out success over 100 scenes:", td3.eval_success(agent, held_out))

agent.save(ARTIFACTS / "raw-agent.npz")
buffer.save(ARTIFACTS / "raw-buffer.bin")
print("saved:", ARTIFACTS / "raw-agent.npz", "and raw-buffer.bin")
