"""Full-scene behavior explanation: settled-heading flow fields and stream plots.

For every traversable grid cell the robot is parked at the cell center facing
the goal and only its angular command is applied until the heading settles
like a compass needle (oscillations resolve to their band midpoint). The
settled direction and the forward speed chosen there define a flow field;
full rollouts from every cell then build a traversal heatmap. Rendering is a
native, byte-deterministic SVG writer plus a machine-readable grid export.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace

import numpy as np

from . import sim2d

RESOLUTION = 0.25
SETTLE_TOL_DEG = 0.5
SETTLE_WINDOW = 10
SETTLE_MAX_ITERS = 200
OSCILLATION_WINDOW = 50
ROLLOUT_CAP = 500


@dataclass
class FlowField:
    """Per-cell settled heading, forward speed, and traversal counts."""

    origin: tuple[float, float]
    resolution: float
    heading: np.ndarray      # (ny, nx) rad; nan over untraversable cells
    speed: np.ndarray        # (ny, nx) m/s
    counts: np.ndarray       # (ny, nx) int traversal counts
    traversable: np.ndarray  # (ny, nx) bool
    rollout_visits: list[int]  # cell-entry events per rollout (conservation check)

    @property
    def shape(self) -> tuple[int, int]:
        return self.heading.shape

    def cell_center(self, ix: int, iy: int) -> np.ndarray:
        x0, y0 = self.origin
        return np.array(
            [x0 + (ix + 0.5) * self.resolution, y0 + (iy + 0.5) * self.resolution]
        )

    def cell_index(self, x: float, y: float) -> tuple[int, int] | None:
        x0, y0 = self.origin
        ix = int(math.floor((x - x0) / self.resolution))
        iy = int(math.floor((y - y0) / self.resolution))
        ny, nx = self.heading.shape
        if 0 <= ix < nx and 0 <= iy < ny:
            return ix, iy
        return None


def _cell_traversable(scene: sim2d.Scene, center: np.ndarray, resolution: float) -> bool:
    """A cell is untraversable when its rectangle overlaps an obstacle or the human."""
    half = resolution / 2.0
    # Human disc vs axis-aligned cell rectangle.
    dx = max(abs(scene.human[0] - center[0]) - half, 0.0)
    dy = max(abs(scene.human[1] - center[1]) - half, 0.0)
    if dx * dx + dy * dy <= sim2d.HUMAN_RADIUS**2:
        return False
    for obstacle in scene.obstacles:
        if _rects_overlap(center, half, obstacle):
            return False
    return True


def _rects_overlap(cell_center: np.ndarray, half: float, obstacle: sim2d.Obstacle) -> bool:
    """Separating-axis test between the axis-aligned cell and an oriented square."""
    corners = obstacle.corners()
    # Cell axes (x, y).
    if corners[:, 0].max() < cell_center[0] - half or corners[:, 0].min() > cell_center[0] + half:
        return False
    if corners[:, 1].max() < cell_center[1] - half or corners[:, 1].min() > cell_center[1] + half:
        return False
    # Square axes.
    c, s = math.cos(obstacle.yaw), math.sin(obstacle.yaw)
    for axis in (np.array([c, s]), np.array([-s, c])):
        sq_center = float(np.asarray(obstacle.center) @ axis)
        sq_lo, sq_hi = sq_center - obstacle.side / 2.0, sq_center + obstacle.side / 2.0
        cell_proj = float(cell_center @ axis)
        reach = half * (abs(axis[0]) + abs(axis[1]))
        if cell_proj + reach < sq_lo or cell_proj - reach > sq_hi:
            return False
    return True


def settle_heading(
    policy,
    scene: sim2d.Scene,
    cell_center,
    *,
    tol_deg: float = SETTLE_TOL_DEG,
    window: int = SETTLE_WINDOW,
    max_iters: int = SETTLE_MAX_ITERS,
    oscillation_window: int = OSCILLATION_WINDOW,
    edges: np.ndarray | None = None,
) -> float:
    """Heading the policy turns into when parked at a point with zero velocity.

    Starts facing the goal and applies only the angular command. Returns the
    settled heading, or the midpoint of the oscillation band of the last
    ``oscillation_window`` headings if no settling occurs within the
    iteration cap.
    """
    center = np.asarray(cell_center, dtype=float)
    goal = np.asarray(scene.goal)
    heading = math.atan2(goal[1] - center[1], goal[0] - center[0])
    headings = [heading]  # unwrapped
    tol = math.radians(tol_deg)
    if edges is None:
        edges = sim2d._scene_edges(scene)
    for _ in range(max_iters):
        pose = (center[0], center[1], sim2d.wrap_angle(heading))
        obs = sim2d.observe(scene, pose, edges=edges)
        action = sim2d.Action.from_normalized(policy(obs.as_vector()))
        heading += action.omega * sim2d.DT
        headings.append(heading)
        if len(headings) >= window + 1:
            recent = headings[-(window + 1) :]
            if max(recent) - min(recent) < tol:
                return sim2d.wrap_angle(float(np.mean(recent)))
    band = headings[-oscillation_window:]
    return sim2d.wrap_angle((max(band) + min(band)) / 2.0)


def _forward_speed(policy, scene, center, heading, edges) -> float:
    pose = (center[0], center[1], heading)
    obs = sim2d.observe(scene, pose, edges=edges)
    return sim2d.Action.from_normalized(policy(obs.as_vector())).v


def compute_flow_field(
    policy,
    scene: sim2d.Scene,
    resolution: float = RESOLUTION,
    *,
    rollouts: bool = True,
) -> FlowField:
    """Settle every traversable cell, then roll trajectories out of each one."""
    xmin, ymin, xmax, ymax = scene.bounds
    nx = int(math.ceil((xmax - xmin) / resolution))
    ny = int(math.ceil((ymax - ymin) / resolution))
    field = FlowField(
        origin=(xmin, ymin),
        resolution=resolution,
        heading=np.full((ny, nx), np.nan),
        speed=np.zeros((ny, nx)),
        counts=np.zeros((ny, nx), dtype=int),
        traversable=np.zeros((ny, nx), dtype=bool),
        rollout_visits=[],
    )
    edges = sim2d._scene_edges(scene)
    for iy in range(ny):
        for ix in range(nx):
            center = field.cell_center(ix, iy)
            if not _cell_traversable(scene, center, resolution):
                continue
            field.traversable[iy, ix] = True
            settled = settle_heading(policy, scene, center, edges=edges)
            field.heading[iy, ix] = settled
            field.speed[iy, ix] = _forward_speed(policy, scene, center, settled, edges)

    if rollouts:
        for iy in range(ny):
            for ix in range(nx):
                if not field.traversable[iy, ix]:
                    continue
                visits = _rollout_counts(policy, scene, field, ix, iy)
                field.rollout_visits.append(visits)
    return field


def _rollout_counts(policy, scene: sim2d.Scene, field: FlowField, ix: int, iy: int) -> int:
    """Roll one episode from a cell and accumulate cell-entry events."""
    center = field.cell_center(ix, iy)
    start = replace(
        scene,
        robot_start=(float(center[0]), float(center[1])),
        robot_heading=float(field.heading[iy, ix]),
    )
    sim = sim2d.Simulator(start)
    obs = sim.reset()
    current = (ix, iy)
    field.counts[iy, ix] += 1
    visits = 1
    for _ in range(ROLLOUT_CAP):
        action = sim2d.Action.from_normalized(policy(obs.as_vector()))
        outcome = sim.step(action)
        obs = outcome.observation
        cell = field.cell_index(sim.position[0], sim.position[1])
        if cell is not None and cell != current:
            field.counts[cell[1], cell[0]] += 1
            visits += 1
        current = cell if cell is not None else current
        if outcome.terminal != "none":
            break
    return visits


# -- rendering ------------------------------------------------------------------

@dataclass(frozen=True)
class RenderResult:
    svg: str
    grid_csv: str


_HEAT_STOPS = (
    (1.00, 1.00, 1.00),
    (1.00, 0.93, 0.63),
    (0.99, 0.68, 0.38),
    (0.84, 0.28, 0.22),
    (0.48, 0.00, 0.16),
)


def _heat_color(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    pos = t * (len(_HEAT_STOPS) - 1)
    i = min(int(pos), len(_HEAT_STOPS) - 2)
    frac = pos - i
    rgb = [
        (1.0 - frac) * _HEAT_STOPS[i][k] + frac * _HEAT_STOPS[i + 1][k] for k in range(3)
    ]
    return "#%02x%02x%02x" % tuple(int(round(255 * v)) for v in rgb)


def _streamlines(field: FlowField, seed_stride: int = 2, max_points: int = 600) -> list[np.ndarray]:
    """Integrate deterministic streamlines over the settled-direction field.

    Lines claim grid cells as they pass; a line stops when it reaches a cell
    already claimed by a different line, which keeps line density even.
    """
    ny, nx = field.shape
    claimed = np.full((ny, nx), -1, dtype=int)
    step = field.resolution / 2.0
    lines: list[np.ndarray] = []

    def direction_at(point: np.ndarray) -> np.ndarray | None:
        cell = field.cell_index(point[0], point[1])
        if cell is None or not field.traversable[cell[1], cell[0]]:
            return None
        h = field.heading[cell[1], cell[0]]
        return np.array([math.cos(h), math.sin(h)])

    def trace(start: np.ndarray, line_id: int, sign: float) -> list[np.ndarray]:
        points = []
        point = start.copy()
        for _ in range(max_points):
            d = direction_at(point)
            if d is None:
                break
            cell = field.cell_index(point[0], point[1])
            owner = claimed[cell[1], cell[0]]
            if owner not in (-1, line_id):
                break
            claimed[cell[1], cell[0]] = line_id
            point = point + sign * step * d
            points.append(point.copy())
        return points

    line_id = 0
    for iy in range(0, ny, seed_stride):
        for ix in range(0, nx, seed_stride):
            if not field.traversable[iy, ix] or claimed[iy, ix] != -1:
                continue
            seed = field.cell_center(ix, iy)
            forward = trace(seed, line_id, +1.0)
            backward = trace(seed, line_id, -1.0)
            pts = list(reversed(backward)) + [seed] + forward
            if len(pts) >= 3:
                lines.append(np.asarray(pts))
            line_id += 1
    return lines


def _star_path(cx: float, cy: float, r: float) -> str:
    points = []
    for k in range(10):
        radius = r if k % 2 == 0 else 0.4 * r
        angle = -math.pi / 2 + k * math.pi / 5
        points.append((cx + radius * math.cos(angle), cy + radius * math.sin(angle)))
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in points)


def render(field: FlowField, scene: sim2d.Scene, *, scale: float = 60.0) -> RenderResult:
    """Produce the stream plot as an SVG string plus the grid as CSV text."""
    xmin, ymin, xmax, ymax = scene.bounds
    width = (xmax - xmin) * scale
    height = (ymax - ymin) * scale

    def to_px(x: float, y: float) -> tuple[float, float]:
        return ((x - xmin) * scale, (ymax - y) * scale)

    out = io.StringIO()
    out.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">\n'
    )
    out.write(f'<rect width="{width:.0f}" height="{height:.0f}" fill="#ffffff"/>\n')

    # Traversal heatmap under everything else.
    max_count = max(int(field.counts.max()), 1)
    ny, nx = field.shape
    cell_px = field.resolution * scale
    for iy in range(ny):
        for ix in range(nx):
            count = int(field.counts[iy, ix])
            if count <= 0:
                continue
            t = math.log1p(count) / math.log1p(max_count)
            cx, cy = field.cell_center(ix, iy)
            px, py = to_px(cx - field.resolution / 2, cy + field.resolution / 2)
            out.write(
                f'<rect x="{px:.2f}" y="{py:.2f}" width="{cell_px:.2f}" height="{cell_px:.2f}" '
                f'fill="{_heat_color(t)}" fill-opacity="0.85"/>\n'
            )

    # Obstacles.
    for obstacle in scene.obstacles:
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (to_px(*c) for c in obstacle.corners()))
        out.write(f'<polygon points="{pts}" fill="#444444"/>\n')

    # Streamlines with a midpoint arrowhead each.
    for line in _streamlines(field):
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (to_px(*p) for p in line))
        out.write(
            f'<polyline points="{pts}" fill="none" stroke="#2a5d8f" '
            f'stroke-width="1.2" stroke-opacity="0.9"/>\n'
        )
        mid = len(line) // 2
        if mid + 1 < len(line):
            p0, p1 = line[mid], line[mid + 1]
            ang = math.atan2(-(p1[1] - p0[1]), p1[0] - p0[0])  # px-space angle
            mx, my = to_px(*p0)
            size = 4.0
            tip = (mx + size * math.cos(ang), my - size * math.sin(ang))
            left = (mx + size * math.cos(ang + 2.5), my - size * math.sin(ang + 2.5))
            right = (mx + size * math.cos(ang - 2.5), my - size * math.sin(ang - 2.5))
            tri = " ".join(f"{x:.2f},{y:.2f}" for x, y in (tip, left, right))
            out.write(f'<polygon points="{tri}" fill="#2a5d8f"/>\n')

    # Human and goal markers.
    hx, hy = to_px(*scene.human)
    out.write(
        f'<circle cx="{hx:.2f}" cy="{hy:.2f}" r="{sim2d.HUMAN_RADIUS * scale:.2f}" '
        f'fill="#d62728" stroke="#7a1010" stroke-width="1.5"/>\n'
    )
    gx, gy = to_px(*scene.goal)
    out.write(
        f'<polygon points="{_star_path(gx, gy, 0.45 * scale)}" '
        f'fill="#1f77b4" stroke="#10405f" stroke-width="1.5"/>\n'
    )
    out.write("</svg>\n")

    return RenderResult(svg=out.getvalue(), grid_csv=export_grid_csv(field))


def export_grid_csv(field: FlowField) -> str:
    """Machine-readable dump: one row per cell with heading, speed, and count."""
    rows = ["x,y,heading_rad,speed,count,traversable"]
    ny, nx = field.shape
    for iy in range(ny):
        for ix in range(nx):
            cx, cy = field.cell_center(ix, iy)
            heading = field.heading[iy, ix]
            rows.append(
                f"{cx:.3f},{cy:.3f},"
                + (f"{heading:.6f}" if np.isfinite(heading) else "nan")
                + f",{field.speed[iy, ix]:.4f},{int(field.counts[iy, ix])},"
                + ("1" if field.traversable[iy, ix] else "0")
            )
    return "\n".join(rows) + "\n"
