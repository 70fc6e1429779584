"""2D point-navigation world: scenes, raycast lidar, unicycle kinematics, sparse rewards.

The world is an open planar arena with a static human, oriented square
obstacles, and a goal location. A differential-drive robot senses the scene
through a 360-ray lidar (min-pooled to 30 rays) and robot-centric polar
coordinates of the goal and the human.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Kinematics / sensing constants.
DT = 0.2                 # control period, s
V_MAX = 0.5              # linear velocity cap, m/s
W_MAX = math.pi          # angular velocity cap, rad/s
LIDAR_RAYS = 360
LIDAR_RANGE = 6.0
POOLED_RAYS = 30
ROBOT_RADIUS = 0.2
HUMAN_RADIUS = 0.3
OBSTACLE_SIDE = 0.5
GOAL_TOLERANCE = 0.4
MAX_EPISODE_STEPS = 500
MAX_EPISODE_TIME = 100.0
OBS_DIM = POOLED_RAYS + 4

# Sparse reward constants.
REWARD_GOAL = 20.0
REWARD_COLLISION = -1.2
REWARD_TIMEOUT = -20.0
REWARD_LOOP = -2.0

# A loop event requires the crossed segment to be more than this many steps old.
LOOP_MIN_AGE = 4
# During sustained contact the collision penalty re-triggers once per this many steps.
COLLISION_PENALTY_PERIOD = 5

MAX_PLACEMENT_ATTEMPTS = 1000


class ContractViolation(ValueError):
    """An operation was called outside its stated contract."""


class SceneSamplingError(RuntimeError):
    """Rejection sampling could not place all scene elements."""


class EpisodeDoneError(RuntimeError):
    """step() was called on an episode that already terminated."""


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class Obstacle:
    """Oriented square: center (m), side length (m), yaw (rad)."""

    center: tuple[float, float]
    side: float = OBSTACLE_SIDE
    yaw: float = 0.0

    def corners(self) -> np.ndarray:
        h = self.side / 2.0
        local = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center)

    def edges(self) -> np.ndarray:
        """(4, 2, 2) array of (start, end) corner pairs."""
        pts = self.corners()
        return np.stack([pts, np.roll(pts, -1, axis=0)], axis=1)

    def contains(self, point: np.ndarray, inflate: float = 0.0) -> bool:
        """True if the point is within ``inflate`` of the square."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rel = np.asarray(point, dtype=float) - np.asarray(self.center)
        local = np.array([c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1]])
        h = self.side / 2.0
        clamped = np.clip(local, -h, h)
        return float(np.hypot(*(local - clamped))) <= inflate


@dataclass
class Scene:
    """Static world description for one navigation task."""

    robot_start: tuple[float, float]
    robot_heading: float
    goal: tuple[float, float]
    human: tuple[float, float]
    obstacles: list[Obstacle]
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    rng_seed: int

    def to_json(self) -> dict:
        return {
            "robot_start": list(self.robot_start),
            "robot_heading": self.robot_heading,
            "goal": list(self.goal),
            "human": list(self.human),
            "obstacles": [
                {"center": list(o.center), "side": o.side, "yaw": o.yaw}
                for o in self.obstacles
            ],
            "bounds": list(self.bounds),
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Scene":
        return cls(
            robot_start=tuple(doc["robot_start"]),
            robot_heading=doc["robot_heading"],
            goal=tuple(doc["goal"]),
            human=tuple(doc["human"]),
            obstacles=[
                Obstacle(tuple(o["center"]), o["side"], o["yaw"])
                for o in doc["obstacles"]
            ],
            bounds=tuple(doc["bounds"]),
            rng_seed=doc["rng_seed"],
        )


@dataclass(frozen=True)
class Observation:
    """Policy input: pooled lidar plus robot-centric goal and human polar coords."""

    lidar: np.ndarray                 # (POOLED_RAYS,) distances in [0, LIDAR_RANGE]
    goal_polar: tuple[float, float]   # (distance m, bearing rad in (-pi, pi])
    human_polar: tuple[float, float]

    def as_vector(self) -> np.ndarray:
        """Physical-unit 34-vector: [lidar(30), d_g, theta_g, d_h, theta_h]."""
        return np.concatenate(
            [self.lidar, [*self.goal_polar, *self.human_polar]]
        )

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "Observation":
        vec = np.asarray(vec, dtype=float)
        return cls(
            lidar=vec[:POOLED_RAYS].copy(),
            goal_polar=(float(vec[POOLED_RAYS]), float(vec[POOLED_RAYS + 1])),
            human_polar=(float(vec[POOLED_RAYS + 2]), float(vec[POOLED_RAYS + 3])),
        )


@dataclass(frozen=True)
class Action:
    """Velocity command; values are clamped to the physical ranges."""

    v: float
    omega: float

    def clamped(self) -> "Action":
        return Action(
            v=min(max(self.v, 0.0), V_MAX),
            omega=min(max(self.omega, -W_MAX), W_MAX),
        )

    def normalized(self) -> np.ndarray:
        """Map to the policy's [-1, 1]^2 output space."""
        a = self.clamped()
        return np.array([a.v / V_MAX * 2.0 - 1.0, a.omega / W_MAX])

    @classmethod
    def from_normalized(cls, a: np.ndarray) -> "Action":
        a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
        return cls(v=(a[0] + 1.0) / 2.0 * V_MAX, omega=a[1] * W_MAX)


@dataclass(frozen=True)
class StepOutcome:
    observation: Observation
    reward: float
    terminal: str          # one of "none", "goal", "timeout_steps", "timeout_time"
    collided: bool         # geometric contact this step (not necessarily penalized)
    events: frozenset[str]


def sample_scene(
    seed: int,
    n_obstacles: int = 4,
    *,
    arena: float = 12.0,
    goal_dist: tuple[float, float] = (2.0, 10.0),
    human_offset: float = 1.5,
) -> Scene:
    """Rejection-sample a navigation scene; deterministic for a fixed seed.

    The start and goal are placed ``goal_dist`` apart, the human sits in the
    corridor between them (lateral offset <= ``human_offset``), and obstacles
    keep >= 0.5 m clearance from every already-occupied footprint.
    """
    if n_obstacles < 0:
        raise ContractViolation("n_obstacles must be >= 0")
    rng = np.random.default_rng(seed)
    margin = 0.5
    lo, hi = margin, arena - margin
    bounds = (0.0, 0.0, arena, arena)

    start = rng.uniform(lo, hi, size=2)
    heading = float(rng.uniform(-math.pi, math.pi))

    goal = None
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        direction = rng.uniform(-math.pi, math.pi)
        dist = rng.uniform(*goal_dist)
        cand = start + dist * np.array([math.cos(direction), math.sin(direction)])
        if lo <= cand[0] <= hi and lo <= cand[1] <= hi:
            goal = cand
            break
    if goal is None:
        raise SceneSamplingError(f"could not place a goal (seed={seed})")

    human = None
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        along = rng.uniform(0.15, 0.85)
        lateral = rng.uniform(-human_offset, human_offset)
        axis = goal - start
        normal = np.array([-axis[1], axis[0]]) / np.linalg.norm(axis)
        cand = start + along * axis + lateral * normal
        in_bounds = lo <= cand[0] <= hi and lo <= cand[1] <= hi
        clear = (
            np.linalg.norm(cand - start) >= 1.0
            and np.linalg.norm(cand - goal) >= 1.0
        )
        if in_bounds and clear:
            human = cand
            break
    if human is None:
        raise SceneSamplingError(f"could not place the human (seed={seed})")

    # Conservative circular footprints for the clearance rule.
    square_radius = OBSTACLE_SIDE * math.sqrt(2.0) / 2.0
    occupied = [
        (start, ROBOT_RADIUS),
        (goal, GOAL_TOLERANCE),
        (human, HUMAN_RADIUS),
    ]
    obstacles: list[Obstacle] = []
    for _ in range(n_obstacles):
        placed = False
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            center = rng.uniform(lo, hi, size=2)
            yaw = float(rng.uniform(0.0, math.pi / 2.0))
            ok = all(
                np.linalg.norm(center - p) >= r + square_radius + 0.5
                for p, r in occupied
            )
            if ok:
                obstacles.append(Obstacle(tuple(center), OBSTACLE_SIDE, yaw))
                occupied.append((center, square_radius))
                placed = True
                break
        if not placed:
            raise SceneSamplingError(
                f"obstacle placement failed after {MAX_PLACEMENT_ATTEMPTS} attempts "
                f"(seed={seed}, n_obstacles={n_obstacles})"
            )

    return Scene(
        robot_start=tuple(start),
        robot_heading=heading,
        goal=tuple(goal),
        human=tuple(human),
        obstacles=obstacles,
        bounds=bounds,
        rng_seed=int(seed),
    )


def _scene_edges(scene: Scene) -> np.ndarray:
    """All obstacle edges as an (E, 2, 2) array; empty (0, 2, 2) if none."""
    if not scene.obstacles:
        return np.zeros((0, 2, 2))
    return np.concatenate([o.edges() for o in scene.obstacles], axis=0)


def lidar_scan(
    scene: Scene,
    pose: tuple[float, float, float],
    *,
    edges: np.ndarray | None = None,
) -> np.ndarray:
    """Cast LIDAR_RAYS rays from the pose; ray i points at heading + i*(2pi/360).

    Returns distances to the nearest obstacle edge or the human disc, capped
    at LIDAR_RANGE. ``edges`` may pass precomputed obstacle edges.
    """
    x, y, heading = pose
    origin = np.array([x, y])
    # A beam source inside matter reads zero range on every ray.
    inside_human = np.linalg.norm(origin - np.asarray(scene.human)) <= HUMAN_RADIUS
    if inside_human or any(o.contains(origin) for o in scene.obstacles):
        return np.zeros(LIDAR_RAYS)
    angles = heading + np.arange(LIDAR_RAYS) * (2.0 * math.pi / LIDAR_RAYS)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)  # (R, 2)
    dist = np.full(LIDAR_RAYS, LIDAR_RANGE)

    if edges is None:
        edges = _scene_edges(scene)
    if edges.shape[0] > 0:
        p = edges[:, 0, :]                      # (E, 2)
        v = edges[:, 1, :] - edges[:, 0, :]     # (E, 2)
        w = p - origin                          # (E, 2)
        denom = dirs[:, 0:1] * v[:, 1] - dirs[:, 1:2] * v[:, 0]   # (R, E)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (w[:, 0] * v[:, 1] - w[:, 1] * v[:, 0]) / denom   # (R, E)
            s = (w[:, 0] * dirs[:, 1:2] - w[:, 1] * dirs[:, 0:1]) / denom
        hit = (np.abs(denom) > 1e-12) & (t >= 0.0) & (s >= 0.0) & (s <= 1.0)
        t = np.where(hit, t, np.inf)
        dist = np.minimum(dist, t.min(axis=1))

    # Human disc.
    oc = np.asarray(scene.human) - origin
    proj = dirs @ oc                                   # (R,)
    perp_sq = float(oc @ oc) - proj**2
    disc = HUMAN_RADIUS**2 - perp_sq
    valid = disc >= 0.0
    root = np.sqrt(np.where(valid, disc, 0.0))
    t_near = proj - root
    t_far = proj + root
    t_hit = np.where(t_near >= 0.0, t_near, np.where(t_far >= 0.0, t_far, np.inf))
    t_hit = np.where(valid, t_hit, np.inf)
    dist = np.minimum(dist, t_hit)

    return np.minimum(dist, LIDAR_RANGE)


def observe(
    scene: Scene,
    pose: tuple[float, float, float],
    *,
    edges: np.ndarray | None = None,
) -> Observation:
    """Sensor model at an arbitrary pose: pooled lidar plus polar goal/human."""
    x, y, heading = pose
    position = np.array([x, y])
    raw = lidar_scan(scene, pose, edges=edges)
    goal = np.asarray(scene.goal) - position
    human = np.asarray(scene.human) - position
    return Observation(
        lidar=min_pool(raw),
        goal_polar=(
            float(np.hypot(*goal)),
            wrap_angle(math.atan2(goal[1], goal[0]) - heading),
        ),
        human_polar=(
            float(np.hypot(*human)),
            wrap_angle(math.atan2(human[1], human[0]) - heading),
        ),
    )


def min_pool(raw: np.ndarray) -> np.ndarray:
    """Downsample a raw scan to POOLED_RAYS entries by per-window minimum."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.shape[0] % POOLED_RAYS != 0:
        raise ContractViolation(
            f"raw scan length {raw.shape} is not divisible by {POOLED_RAYS}"
        )
    window = raw.shape[0] // POOLED_RAYS
    return raw.reshape(POOLED_RAYS, window).min(axis=1)


def compute_reward(events: frozenset[str] | set[str]) -> float:
    """Sum of the sparse reward terms triggered this step."""
    total = 0.0
    if "goal" in events:
        total += REWARD_GOAL
    if "collision" in events:
        total += REWARD_COLLISION
    if "timeout" in events:
        total += REWARD_TIMEOUT
    if "loop" in events:
        total += REWARD_LOOP
    return total


def _segments_cross(p1, p2, q1, q2) -> np.ndarray:
    """Vectorized exact segment intersection of (p1,p2) against each (q1[i],q2[i]).

    Degenerate (zero-length) segments never intersect anything: a stationary
    robot sweeps no area and must not be flagged as looping.
    """
    def cross(ax, ay, bx, by):
        return ax * by - ay * bx

    r = p2 - p1
    v = q2 - q1
    d1 = cross(v[:, 0], v[:, 1], p1[0] - q1[:, 0], p1[1] - q1[:, 1])
    d2 = cross(v[:, 0], v[:, 1], p2[0] - q1[:, 0], p2[1] - q1[:, 1])
    d3 = cross(r[0], r[1], q1[:, 0] - p1[0], q1[:, 1] - p1[1])
    d4 = cross(r[0], r[1], q2[:, 0] - p1[0], q2[:, 1] - p1[1])
    proper = ((d1 > 0) != (d2 > 0)) & (d1 != 0) & (d2 != 0) \
        & ((d3 > 0) != (d4 > 0)) & (d3 != 0) & (d4 != 0)

    def on_segment(ax, ay, bx, by, cx, cy):
        # c is collinear with a-b; test bounding-box membership
        return (
            (np.minimum(ax, bx) <= cx) & (cx <= np.maximum(ax, bx))
            & (np.minimum(ay, by) <= cy) & (cy <= np.maximum(ay, by))
        )

    collinear = (
        ((d1 == 0) & on_segment(q1[:, 0], q1[:, 1], q2[:, 0], q2[:, 1], p1[0], p1[1]))
        | ((d2 == 0) & on_segment(q1[:, 0], q1[:, 1], q2[:, 0], q2[:, 1], p2[0], p2[1]))
        | ((d3 == 0) & on_segment(p1[0], p1[1], p2[0], p2[1], q1[:, 0], q1[:, 1]))
        | ((d4 == 0) & on_segment(p1[0], p1[1], p2[0], p2[1], q2[:, 0], q2[:, 1]))
    )
    nondegenerate = (np.abs(r[0]) + np.abs(r[1]) > 1e-12) & (
        np.abs(v[:, 0]) + np.abs(v[:, 1]) > 1e-12
    )
    return (proper | collinear) & nondegenerate


def detect_self_intersection(polyline: np.ndarray, min_age: int = LOOP_MIN_AGE) -> bool:
    """True iff the newest segment crosses a segment more than ``min_age`` steps older.

    ``polyline`` is an (N, 2) array of positions, oldest first; segment j ends
    at index j and is compared only when current_index - j > min_age.
    """
    pts = np.asarray(polyline, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ContractViolation("polyline needs at least 2 poses")
    n = pts.shape[0] - 1          # index of the newest point == current step
    last_old_end = n - min_age - 1
    if last_old_end < 1:
        return False
    q1 = pts[0:last_old_end]
    q2 = pts[1:last_old_end + 1]
    return bool(np.any(_segments_cross(pts[n - 1], pts[n], q1, q2)))


@dataclass
class Trajectory:
    """One episode rollout: per-step records plus the scene that produced it."""

    scene: Scene
    observations: np.ndarray        # (n, OBS_DIM) physical units, pre-action states
    actions: np.ndarray             # (n, 2) normalized [-1, 1]
    rewards: np.ndarray             # (n,)
    poses: np.ndarray               # (n + 1, 3) x, y, heading; row 0 is the start
    events: list[frozenset[str]]    # per step
    terminal: str
    min_human_distance: float | None = field(default=None)

    def __post_init__(self) -> None:
        if self.min_human_distance is None:
            self.min_human_distance = self.compute_min_human_distance()

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    def compute_min_human_distance(self) -> float:
        deltas = self.poses[:, :2] - np.asarray(self.scene.human)
        return float(np.hypot(deltas[:, 0], deltas[:, 1]).min())

    def collided(self) -> bool:
        return any("collision" in ev for ev in self.events)

    def self_intersected(self) -> bool:
        return any("loop" in ev for ev in self.events)

    def step_records(self) -> list[dict]:
        """Per-step log records (pose, observation, action, reward, events)."""
        records = []
        for i in range(len(self)):
            act = Action.from_normalized(self.actions[i])
            records.append(
                {
                    "pose": self.poses[i + 1].tolist(),
                    "observation": self.observations[i].tolist(),
                    "action": {"v": act.v, "omega": act.omega},
                    "reward": float(self.rewards[i]),
                    "events": sorted(self.events[i]),
                }
            )
        return records

    def to_json(self) -> dict:
        return {
            "scene": self.scene.to_json(),
            "observations": self.observations.tolist(),
            "actions": self.actions.tolist(),
            "rewards": self.rewards.tolist(),
            "poses": self.poses.tolist(),
            "events": [sorted(ev) for ev in self.events],
            "terminal": self.terminal,
            "min_human_distance": self.min_human_distance,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Trajectory":
        return cls(
            scene=Scene.from_json(doc["scene"]),
            observations=np.asarray(doc["observations"], dtype=float),
            actions=np.asarray(doc["actions"], dtype=float),
            rewards=np.asarray(doc["rewards"], dtype=float),
            poses=np.asarray(doc["poses"], dtype=float),
            events=[frozenset(ev) for ev in doc["events"]],
            terminal=doc["terminal"],
            min_human_distance=doc["min_human_distance"],
        )


class Simulator:
    """Episode lifecycle for one scene; single-writer, one instance per agent."""

    def __init__(self, scene: Scene):
        self.scene = scene
        self._edges = _scene_edges(scene)
        self.reset()

    def reset(self) -> Observation:
        self.position = np.asarray(self.scene.robot_start, dtype=float)
        self.heading = float(self.scene.robot_heading)
        self.step_count = 0
        self.sim_time = 0.0
        self.terminal = "none"
        self._poses = np.empty((MAX_EPISODE_STEPS + 2, 3))
        self._poses[0] = (*self.position, self.heading)
        self._contact_run = 0
        return self.observe()

    def poses(self) -> np.ndarray:
        """(step_count + 1, 3) pose history including the start pose."""
        return self._poses[: self.step_count + 1]

    @property
    def pose(self) -> tuple[float, float, float]:
        return (float(self.position[0]), float(self.position[1]), self.heading)

    def observe(self) -> Observation:
        return observe(self.scene, self.pose, edges=self._edges)

    def _in_contact(self) -> bool:
        if np.linalg.norm(self.position - np.asarray(self.scene.human)) <= ROBOT_RADIUS + HUMAN_RADIUS:
            return True
        return any(o.contains(self.position, inflate=ROBOT_RADIUS) for o in self.scene.obstacles)

    def step(self, action: Action) -> StepOutcome:
        if self.terminal != "none":
            raise EpisodeDoneError("episode already terminated; call reset()")
        act = action.clamped()
        self.heading = wrap_angle(self.heading + act.omega * DT)
        self.position = self.position + act.v * DT * np.array(
            [math.cos(self.heading), math.sin(self.heading)]
        )
        self.step_count += 1
        self.sim_time = self.step_count * DT
        self._poses[self.step_count] = (*self.position, self.heading)

        events: set[str] = set()
        contact = self._in_contact()
        if contact:
            if self._contact_run % COLLISION_PENALTY_PERIOD == 0:
                events.add("collision")
            self._contact_run += 1
        else:
            self._contact_run = 0

        if detect_self_intersection(self._poses[: self.step_count + 1, :2]):
            events.add("loop")

        d_goal = float(np.linalg.norm(np.asarray(self.scene.goal) - self.position))
        if d_goal <= GOAL_TOLERANCE:
            events.add("goal")
            self.terminal = "goal"
        elif self.step_count > MAX_EPISODE_STEPS:
            events.add("timeout")
            self.terminal = "timeout_steps"
        elif self.sim_time > MAX_EPISODE_TIME + 1e-9:
            events.add("timeout")
            self.terminal = "timeout_time"

        return StepOutcome(
            observation=self.observe(),
            reward=compute_reward(events),
            terminal=self.terminal,
            collided=contact,
            events=frozenset(events),
        )


def rollout(policy, scene: Scene, *, max_steps: int | None = None) -> Trajectory:
    """Roll one deterministic episode; ``policy`` maps an obs vector to [-1,1]^2."""
    sim = Simulator(scene)
    obs = sim.reset()
    observations, actions, rewards, events = [], [], [], []
    limit = max_steps if max_steps is not None else MAX_EPISODE_STEPS + 1
    for _ in range(limit):
        vec = obs.as_vector()
        a = np.clip(np.asarray(policy(vec), dtype=float), -1.0, 1.0)
        outcome = sim.step(Action.from_normalized(a))
        observations.append(vec)
        actions.append(a)
        rewards.append(outcome.reward)
        events.append(outcome.events)
        obs = outcome.observation
        if outcome.terminal != "none":
            break
    return Trajectory(
        scene=scene,
        observations=np.asarray(observations).reshape(-1, OBS_DIM),
        actions=np.asarray(actions).reshape(-1, 2),
        rewards=np.asarray(rewards, dtype=float),
        poses=sim.poses().copy(),
        events=events,
        terminal=sim.terminal,
    )
