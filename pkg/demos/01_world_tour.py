"""Tour of the 2D navigation world: scenes, lidar, stepping, sparse rewards.

Run:  python3 demos/01_world_tour.py
"""

import json

import numpy as np

from prefnav import sim2d

# A scene is sampled deterministically from a seed: robot start/heading, a
# goal 2-10 m away, one human in the corridor between them, and (here) four
# oriented square obstacles with half-meter clearances.
scene = sim2d.sample_scene(seed=7, n_obstacles=4)
print("start:", np.round(scene.robot_start, 2), "goal:", np.round(scene.goal, 2))
print("human:", np.round(scene.human, 2), "obstacles:", len(scene.obstacles))

# Scenes serialize to plain JSON (and back, bit-exact).
doc = json.dumps(scene.to_json(), indent=2)
assert sim2d.Scene.from_json(json.loads(doc)).to_json() == scene.to_json()

# The raw lidar casts 360 rays (1 degree apart, 6 m range); the policy sees a
# min-pooled 30-ray version plus polar goal/human coordinates: 34 numbers.
sim = sim2d.Simulator(scene)
obs = sim.reset()
raw = sim2d.lidar_scan(scene, sim.pose)
print("raw scan: min %.2f m, hits under range: %d/360" % (raw.min(), (raw < 6).sum()))
print("pooled:", np.round(obs.lidar, 2))
print("goal polar: d=%.2f m, bearing=%.2f rad" % obs.goal_polar)

# Stepping integrates unicycle kinematics at dt = 0.2 s. Rewards are sparse:
# +20 goal, -1.2 collision, -20 timeout, -2 self-intersection loop.
outcome = sim.step(sim2d.Action(v=0.5, omega=0.3))
print("after one step: pose", np.round(sim.pose, 3), "reward", outcome.reward)

# A full rollout under a simple goal-seeking controller:
def seeker(obs_vec):
    bearing = obs_vec[31]
    return np.array([1.0, np.clip(bearing, -1, 1)])  # normalized [v, omega]

trajectory = sim2d.rollout(seeker, scene)
print(
    "rollout: %d steps, terminal=%s, min human distance %.2f m, return %.1f"
    % (len(trajectory), trajectory.terminal, trajectory.min_human_distance, trajectory.rewards.sum())
)

# Per-step log records are JSON-friendly for external analysis.
print("first step record:", json.dumps(trajectory.step_records()[0])[:120], "...")
