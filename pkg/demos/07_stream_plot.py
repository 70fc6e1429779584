"""Explain a policy's whole-scene behavior with a flow-field stream plot.

The robot is parked at every traversable 0.25 m grid cell facing the goal and
only its turn command runs until the heading settles like a compass needle;
the settled direction and chosen forward speed define a flow field. Rollouts
from every cell then build a traversal heatmap rendered under the
streamlines. Output is a standalone SVG plus the raw grid as CSV.
Needs demos/02 (and optionally 06) artifacts.

Run:  python3 demos/07_stream_plot.py
"""

from pathlib import Path

from prefnav import sim2d, td3, viz

ARTIFACTS = Path(__file__).parent / "artifacts"
scene = sim2d.sample_scene(2**31 + 42, n_obstacles=0, arena=10.0, goal_dist=(2.0, 6.0))

for name in ("raw-agent", "aligned-ensemble-15"):
    path = ARTIFACTS / f"{name}.npz"
    if not path.exists():
        print("skipping", name, "(artifact missing; run earlier demos)")
        continue
    agent = td3.Td3Agent.load(path)
    print(f"computing flow field for {name} ...")
    field = viz.compute_flow_field(agent.policy, scene)
    result = viz.render(field, scene)
    (ARTIFACTS / f"stream-{name}.svg").write_text(result.svg)
    (ARTIFACTS / f"stream-{name}-grid.csv").write_text(result.grid_csv)
    traversable = int(field.traversable.sum())
    print(
        f"  {traversable} traversable cells, max traversal count {field.counts.max()},"
        f" wrote stream-{name}.svg / -grid.csv"
    )
