"""Preference query generation and the simulated distance-preferring oracle.

Two query sources exist: ensemble pairs (two members rolled out on the same
scene, flawed rollouts filtered) and the segment baseline (fixed-length
snippets drawn uniformly from rollouts of the base policy on randomized
scenes).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterable, Iterator

import numpy as np

from . import sim2d
from .ensemble import Ensemble
from .storage import read_jsonl, write_jsonl

SEGMENT_LENGTH = 20  # steps, ~4 s at dt = 0.2 s


class QueryGenerationError(RuntimeError):
    """Scene budget exhausted before enough valid pairs were produced."""


@dataclass(frozen=True)
class Segment:
    """A fixed-length slice of a parent trajectory."""

    parent_id: str
    start: int
    observations: np.ndarray   # (k, OBS_DIM)
    actions: np.ndarray        # (k, 2) normalized
    poses: np.ndarray          # (k + 1, 3)
    scene: sim2d.Scene
    min_human_distance: float

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    def to_json(self) -> dict:
        return {
            "type": "segment",
            "parent_id": self.parent_id,
            "start": self.start,
            "observations": self.observations.tolist(),
            "actions": self.actions.tolist(),
            "poses": self.poses.tolist(),
            "scene": self.scene.to_json(),
            "min_human_distance": self.min_human_distance,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Segment":
        return cls(
            parent_id=doc["parent_id"],
            start=doc["start"],
            observations=np.asarray(doc["observations"], dtype=float),
            actions=np.asarray(doc["actions"], dtype=float),
            poses=np.asarray(doc["poses"], dtype=float),
            scene=sim2d.Scene.from_json(doc["scene"]),
            min_human_distance=doc["min_human_distance"],
        )


def cut_segment(trajectory: sim2d.Trajectory, start: int, length: int = SEGMENT_LENGTH) -> Segment:
    """Slice ``length`` steps out of a trajectory starting at step ``start``."""
    if start < 0 or start + length > len(trajectory):
        raise ValueError(f"segment [{start}, {start + length}) outside trajectory of {len(trajectory)} steps")
    poses = trajectory.poses[start : start + length + 1]
    deltas = poses[:, :2] - np.asarray(trajectory.scene.human)
    return Segment(
        parent_id=f"traj-{trajectory.scene.rng_seed}",
        start=start,
        observations=trajectory.observations[start : start + length].copy(),
        actions=trajectory.actions[start : start + length].copy(),
        poses=poses.copy(),
        scene=trajectory.scene,
        min_human_distance=float(np.hypot(deltas[:, 0], deltas[:, 1]).min()),
    )


def item_steps(item) -> tuple[np.ndarray, np.ndarray]:
    """(observations, actions) arrays of a trajectory or segment."""
    return item.observations, item.actions


@dataclass(frozen=True)
class PreferencePair:
    """Two comparison items plus (eventually) an annotator's choice."""

    pair_id: str
    source: str                       # "ensemble" | "segment"
    first: sim2d.Trajectory | Segment
    second: sim2d.Trajectory | Segment
    scene_id: str | None = None       # shared scene for ensemble pairs
    choice: str | None = None         # "first" | "second" | "skip" | None
    annotator: str | None = None

    def is_labeled(self) -> bool:
        return self.choice in ("first", "second")

    def to_json(self) -> dict:
        def item_doc(item):
            if isinstance(item, Segment):
                return item.to_json()
            doc = item.to_json()
            doc["type"] = "trajectory"
            return doc

        return {
            "pair_id": self.pair_id,
            "source": self.source,
            "scene_id": self.scene_id,
            "choice": self.choice,
            "annotator": self.annotator,
            "first": item_doc(self.first),
            "second": item_doc(self.second),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PreferencePair":
        def parse_item(item_doc):
            if item_doc["type"] == "segment":
                return Segment.from_json(item_doc)
            return sim2d.Trajectory.from_json(item_doc)

        return cls(
            pair_id=doc["pair_id"],
            source=doc["source"],
            scene_id=doc.get("scene_id"),
            choice=doc.get("choice"),
            annotator=doc.get("annotator"),
            first=parse_item(doc["first"]),
            second=parse_item(doc["second"]),
        )


def save_pairs(path, pairs: list[PreferencePair]) -> None:
    write_jsonl(path, [p.to_json() for p in pairs])


def load_pairs(path) -> list[PreferencePair]:
    return [PreferencePair.from_json(doc) for doc in read_jsonl(path)]


def generate_ensemble_queries(
    ensemble: Ensemble,
    scene_seeds: Iterable[int],
    n_queries: int,
    *,
    rng: np.random.Generator,
    scene_kwargs: dict | None = None,
) -> list[PreferencePair]:
    """One unordered pair of clean member rollouts per scene until enough exist.

    Rollouts with any collision event or self-intersection are dropped; a
    scene that keeps fewer than two rollouts is skipped. Raises after trying
    100 * n_queries scenes.
    """
    kwargs = dict(scene_kwargs or {})
    pairs: list[PreferencePair] = []
    seeds: Iterator[int] = iter(scene_seeds)
    tried = 0
    budget = 100 * n_queries
    while len(pairs) < n_queries:
        if tried >= budget:
            raise QueryGenerationError(
                f"only {len(pairs)}/{n_queries} pairs after {tried} scenes"
            )
        try:
            seed = next(seeds)
        except StopIteration as exc:
            raise QueryGenerationError("scene seed stream exhausted") from exc
        tried += 1
        scene = sim2d.sample_scene(int(seed), **kwargs)
        rollouts = [sim2d.rollout(m.policy, scene) for m in ensemble.members]
        clean = [t for t in rollouts if not t.collided() and not t.self_intersected()]
        if len(clean) < 2:
            continue
        i, j = map(int, rng.choice(len(clean), size=2, replace=False))
        pairs.append(
            PreferencePair(
                pair_id=f"ensemble-{len(pairs):05d}",
                source="ensemble",
                scene_id=f"scene-{scene.rng_seed}",
                first=clean[i],
                second=clean[j],
            )
        )
    return pairs


def generate_segment_queries(
    policy: Callable[[np.ndarray], np.ndarray],
    scene_seeds: Iterable[int],
    n_queries: int,
    *,
    rng: np.random.Generator,
    pool_scenes: int = 50,
    segment_length: int = SEGMENT_LENGTH,
    scene_kwargs: dict | None = None,
) -> list[PreferencePair]:
    """Uniform segment pairs from a pool of base-policy rollouts.

    The pool spans randomized scenes; the two segments of a pair may come from
    different scenes. Trajectories shorter than the segment length are
    excluded from the pool.
    """
    kwargs = dict(scene_kwargs or {})
    pool: list[sim2d.Trajectory] = []
    seeds = iter(scene_seeds)
    while len(pool) < pool_scenes:
        try:
            seed = next(seeds)
        except StopIteration:
            break
        trajectory = sim2d.rollout(policy, sim2d.sample_scene(int(seed), **kwargs))
        if len(trajectory) >= segment_length:
            pool.append(trajectory)
    if not pool:
        raise QueryGenerationError("no pool trajectory is at least one segment long")

    def draw() -> Segment:
        trajectory = pool[int(rng.integers(0, len(pool)))]
        start = int(rng.integers(0, len(trajectory) - segment_length + 1))
        return cut_segment(trajectory, start, segment_length)

    return [
        PreferencePair(
            pair_id=f"segment-{i:05d}",
            source="segment",
            first=draw(),
            second=draw(),
        )
        for i in range(n_queries)
    ]


def oracle_label(pair: PreferencePair, rng: np.random.Generator) -> PreferencePair:
    """Label a pair with the simulated annotator preferring larger min human distance."""
    if pair.choice is not None:
        raise ValueError(f"pair {pair.pair_id} is already labeled")
    d1 = pair.first.min_human_distance
    d2 = pair.second.min_human_distance
    if d1 > d2:
        choice = "first"
    elif d2 > d1:
        choice = "second"
    else:
        choice = "first" if rng.random() < 0.5 else "second"
    return replace(pair, choice=choice, annotator="oracle")


def oracle_label_all(pairs: list[PreferencePair], seed: int = 0) -> list[PreferencePair]:
    rng = np.random.default_rng(seed)
    return [oracle_label(p, rng) for p in pairs]
