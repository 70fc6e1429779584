"""Stage orchestration: artifact files, manifests, and idempotent re-runs.

Every stage reads its predecessors' files from the experiment root, writes
versioned outputs plus a manifest (config digest, input hashes, output
hashes), and is skipped when nothing it depends on has changed.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
from pathlib import Path

import numpy as np

from . import align as align_mod
from . import ensemble as ensemble_mod
from . import querygen, sim2d, td3, viz
from .config import ExperimentConfig
from .rewardmodel import RewardModel, train_reward_model

PIPELINE_VERSION = 1
STAGES = ("raw", "ensemble", "query", "reward", "align", "eval", "viz")

# Disjoint scene-seed ranges (training streams use seeds < 2**31).
QUERY_SEED_BASE = 3_000_000_000
SEGMENT_SEED_BASE = 3_500_000_000
ALIGN_EVAL_SEED_OFFSET = 555


class StageDependencyError(RuntimeError):
    """A required input artifact is missing."""

    def __init__(self, stage: str, artifact: Path):
        self.stage = stage
        self.artifact = Path(artifact)
        super().__init__(f"stage '{stage}' requires missing artifact: {artifact}")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _config_digest(config: ExperimentConfig) -> str:
    doc = config.to_json()
    doc.pop("root", None)  # moving an experiment directory keeps artifacts valid
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    path.write_text(buf.getvalue())


class Stage:
    """Manifest-backed unit of work."""

    def __init__(self, config: ExperimentConfig, name: str, suffix: str = "", dir_name: str | None = None):
        self.config = config
        self.name = name
        self.dir = config.root / (dir_name or name)
        tag = f"-{suffix}" if suffix else ""
        self.manifest_path = self.dir / f"manifest{tag}.json"

    def require(self, path: Path) -> Path:
        if not Path(path).exists():
            raise StageDependencyError(self.name, path)
        return Path(path)

    def up_to_date(self, inputs: list[Path]) -> bool:
        if not self.manifest_path.exists():
            return False
        manifest = json.loads(self.manifest_path.read_text())
        if manifest.get("version") != PIPELINE_VERSION:
            return False
        if manifest.get("config_digest") != _config_digest(self.config):
            return False
        recorded_inputs = manifest.get("inputs", {})
        current = {str(p.relative_to(self.config.root)): _sha256(p) for p in inputs}
        if recorded_inputs != current:
            return False
        for rel, digest in manifest.get("outputs", {}).items():
            path = self.config.root / rel
            if not path.exists() or _sha256(path) != digest:
                return False
        return True

    def write_manifest(self, inputs: list[Path], outputs: list[Path], extra: dict | None = None) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        root = self.config.root
        manifest = {
            "stage": self.name,
            "version": PIPELINE_VERSION,
            "config_digest": _config_digest(self.config),
            "config": self.config.to_json(),
            "seed": self.config.seed,
            "inputs": {str(p.relative_to(root)): _sha256(p) for p in inputs},
            "outputs": {str(p.relative_to(root)): _sha256(p) for p in outputs},
        }
        if extra:
            manifest.update(extra)
        self.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


# -- stage implementations -----------------------------------------------------

def raw_paths(config: ExperimentConfig) -> dict[str, Path]:
    d = config.root / "raw"
    return {"agent": d / "agent.npz", "buffer": d / "buffer.bin", "history": d / "history.csv"}


def stage_raw(config: ExperimentConfig, *, verbose: bool = False) -> dict[str, Path]:
    paths = raw_paths(config)
    stage = Stage(config, "raw")
    if stage.up_to_date([]):
        return paths
    stage.dir.mkdir(parents=True, exist_ok=True)
    eval_scenes = td3.make_scene_suite(config.seed, config.eval_scenes, config.scene_kwargs())
    agent, buffer, history = td3.train_raw(
        config.seed,
        config.raw_train_steps,
        config.td3(),
        config.scene_kwargs(),
        eval_scenes=eval_scenes,
        success_target=config.raw_success_target,
        verbose=verbose,
    )
    agent.save(paths["agent"])
    buffer.save(paths["buffer"])
    write_csv(paths["history"], history)
    stage.write_manifest([], list(paths.values()))
    return paths


def ensemble_paths(config: ExperimentConfig) -> dict[str, Path]:
    d = config.root / "ensemble"
    return {"dir": d, "history": d / "history.csv", "meta": d / "ensemble.json"}


def stage_ensemble(config: ExperimentConfig, *, verbose: bool = False) -> dict[str, Path]:
    paths = ensemble_paths(config)
    raw = raw_paths(config)
    stage = Stage(config, "ensemble")
    inputs = [stage.require(raw["agent"]), stage.require(raw["buffer"])]
    if stage.up_to_date(inputs):
        return paths
    stage.dir.mkdir(parents=True, exist_ok=True)
    raw_agent = td3.Td3Agent.load(raw["agent"])
    raw_buffer = td3.ReplayBuffer.load(raw["buffer"])
    group = ensemble_mod.warm_start(raw_agent, raw_buffer, config.ensemble())
    eval_scenes = td3.make_scene_suite(config.seed, min(config.eval_scenes, 20), config.scene_kwargs())
    history = ensemble_mod.train_ensemble(
        group,
        config.seed + 1000,
        config.scene_kwargs(),
        eval_scenes=eval_scenes,
        verbose=verbose,
    )
    ensemble_mod.save_ensemble(paths["dir"], group)
    write_csv(paths["history"], history)
    outputs = [paths["meta"], paths["history"]] + [
        paths["dir"] / f"member{i}.npz" for i in range(config.n_members)
    ]
    stage.write_manifest(inputs, outputs)
    return paths


def query_path(config: ExperimentConfig, source: str, n_queries: int, labeled: bool = False) -> Path:
    tag = "-labeled" if labeled else ""
    return config.root / "queries" / f"{source}-{n_queries}{tag}.jsonl"


def stage_query(
    config: ExperimentConfig, source: str, n_queries: int, *, seed_offset: int = 0
) -> Path:
    if source not in ("ensemble", "segment"):
        raise ValueError(f"unknown query source {source!r}")
    out = query_path(config, source, n_queries)
    stage = Stage(config, "query", f"{source}-{n_queries}", dir_name="queries")
    rng = np.random.default_rng(config.seed + 17 + seed_offset)
    if source == "ensemble":
        ens = ensemble_paths(config)
        inputs = [stage.require(ens["meta"])] + [
            stage.require(ens["dir"] / f"member{i}.npz") for i in range(config.n_members)
        ]
        if stage.up_to_date(inputs):
            return out
        out.parent.mkdir(parents=True, exist_ok=True)
        group = ensemble_mod.load_ensemble(ens["dir"])
        seeds = itertools.count(QUERY_SEED_BASE + config.seed * 1_000_000 + seed_offset * 100_000)
        pairs = querygen.generate_ensemble_queries(
            group, seeds, n_queries, rng=rng, scene_kwargs=config.scene_kwargs()
        )
    else:
        raw = raw_paths(config)
        inputs = [stage.require(raw["agent"])]
        if stage.up_to_date(inputs):
            return out
        out.parent.mkdir(parents=True, exist_ok=True)
        agent = td3.Td3Agent.load(raw["agent"])
        seeds = itertools.count(SEGMENT_SEED_BASE + config.seed * 1_000_000 + seed_offset * 100_000)
        pairs = querygen.generate_segment_queries(
            agent.policy,
            seeds,
            n_queries,
            rng=rng,
            pool_scenes=config.query_pool_scenes,
            segment_length=config.segment_length,
            scene_kwargs=config.scene_kwargs(),
        )
    querygen.save_pairs(out, pairs)
    stage.write_manifest(inputs, [out])
    return out


def stage_label_oracle(config: ExperimentConfig, source: str, n_queries: int) -> Path:
    out = query_path(config, source, n_queries, labeled=True)
    stage = Stage(config, "query", f"{source}-{n_queries}-labeled", dir_name="queries")
    unlabeled = stage.require(query_path(config, source, n_queries))
    if stage.up_to_date([unlabeled]):
        return out
    pairs = querygen.load_pairs(unlabeled)
    labeled = querygen.oracle_label_all(pairs, seed=config.seed + 31)
    querygen.save_pairs(out, labeled)
    stage.write_manifest([unlabeled], [out])
    return out


def reward_model_path(config: ExperimentConfig, source: str, n_queries: int) -> Path:
    return config.root / "reward" / f"{source}-{n_queries}.npz"


def stage_reward(config: ExperimentConfig, source: str, n_queries: int) -> Path:
    out = reward_model_path(config, source, n_queries)
    stage = Stage(config, "reward", f"{source}-{n_queries}")
    labeled_path = stage.require(query_path(config, source, n_queries, labeled=True))
    raw = raw_paths(config)
    buffer_path = stage.require(raw["buffer"])
    inputs = [labeled_path, buffer_path]
    if stage.up_to_date(inputs):
        return out
    out.parent.mkdir(parents=True, exist_ok=True)
    pairs = querygen.load_pairs(labeled_path)
    buffer = td3.ReplayBuffer.load(buffer_path)
    norm_sample = buffer.sample_states(10_000, np.random.default_rng(config.seed + 53))
    model, history = train_reward_model(
        pairs,
        epochs=config.reward_epochs,
        lr=config.reward_lr,
        seed=config.seed,
        norm_sample=norm_sample,
        trunk_widths=config.trunk_widths,
        encoder_hidden=config.encoder_hidden,
    )
    model.metadata.update({"source": source, "n_queries": n_queries})
    model.save(out)
    history_path = out.with_name(out.stem + "-history.csv")
    write_csv(history_path, history)
    stage.write_manifest(inputs, [out, history_path])
    return out


def aligned_path(config: ExperimentConfig, source: str, n_queries: int) -> Path:
    return config.root / "align" / f"{source}-{n_queries}.npz"


def stage_align(
    config: ExperimentConfig,
    source: str,
    n_queries: int,
    *,
    model_path: Path | None = None,
    verbose: bool = False,
) -> Path:
    out = aligned_path(config, source, n_queries)
    stage = Stage(config, "align", f"{source}-{n_queries}")
    raw = raw_paths(config)
    model_file = Path(model_path) if model_path else reward_model_path(config, source, n_queries)
    inputs = [
        stage.require(raw["agent"]),
        stage.require(raw["buffer"]),
        stage.require(model_file),
    ]
    if stage.up_to_date(inputs):
        return out
    out.parent.mkdir(parents=True, exist_ok=True)
    agent = td3.Td3Agent.load(raw["agent"])
    buffer = td3.ReplayBuffer.load(raw["buffer"])
    model = RewardModel.load(model_file)
    eval_scenes = td3.make_scene_suite(
        config.seed + ALIGN_EVAL_SEED_OFFSET, min(config.eval_scenes, 20), config.scene_kwargs()
    )
    aligned, history = align_mod.align_policy(
        agent,
        buffer,
        model,
        lam=config.blend_lambda,
        epochs=config.alignment_epochs,
        updates_per_epoch=config.alignment_updates,
        eval_scenes=eval_scenes,
        seed=config.seed + 7,
        verbose=verbose,
    )
    aligned.save(out)
    history_path = out.with_name(out.stem + "-history.csv")
    write_csv(history_path, history)
    stage.write_manifest(inputs, [out, history_path])
    return out


def stage_eval(config: ExperimentConfig, compare: list[str] | None = None) -> dict[str, Path]:
    """Shared-scene evaluation of the base policy and any aligned checkpoints."""
    d = config.root / "eval"
    paths = {"csv": d / "report.csv", "json": d / "report.json"}
    stage = Stage(config, "eval")
    raw = raw_paths(config)
    policies: dict[str, Path] = {"raw": stage.require(raw["agent"])}
    if compare is None:
        compare = sorted(
            p.stem for p in (config.root / "align").glob("*.npz") if "-history" not in p.stem
        )
    for name in compare:
        if name == "raw":
            continue
        policies[name] = stage.require(config.root / "align" / f"{name}.npz")
    inputs = list(policies.values())
    if stage.up_to_date(inputs):
        return paths
    d.mkdir(parents=True, exist_ok=True)
    scenes = td3.make_scene_suite(config.seed, config.eval_scenes, config.scene_kwargs())
    rows, docs = [], {}
    raw_report = None
    for name, path in policies.items():
        agent = td3.Td3Agent.load(path)
        report = align_mod.evaluate_policy(agent, scenes)
        if name == "raw":
            raw_report = report
        docs[name] = report.to_json()
        rows.append(
            {
                "policy": name,
                "min_human_distance": round(report.mean_min_human_distance, 4),
                "success_rate": report.success_rate,
                "collision_rate": report.collision_rate,
                "timeout_rate": report.timeout_rate,
            }
        )
    for row in rows:
        if row["policy"] == "raw" or raw_report is None:
            row["p_vs_raw"] = ""
            continue
        row["p_vs_raw"] = align_mod.welch_t_test(
            docs[row["policy"]]["min_distance_samples"], raw_report.min_distance_samples
        )
    write_csv(paths["csv"], rows)
    paths["json"].write_text(json.dumps(docs, indent=2, sort_keys=True))
    stage.write_manifest(inputs, list(paths.values()))
    return paths


def stage_viz(config: ExperimentConfig, policy: str = "raw", *, scene_seed: int | None = None) -> dict[str, Path]:
    """Stream plot of a trained policy on one representative scene."""
    d = config.root / "viz"
    paths = {"svg": d / f"{policy}.svg", "grid": d / f"{policy}-grid.csv"}
    stage = Stage(config, "viz", policy)
    if policy == "raw":
        agent_path = stage.require(raw_paths(config)["agent"])
    else:
        agent_path = stage.require(config.root / "align" / f"{policy}.npz")
    if stage.up_to_date([agent_path]):
        return paths
    d.mkdir(parents=True, exist_ok=True)
    agent = td3.Td3Agent.load(agent_path)
    seed = scene_seed if scene_seed is not None else 2**31 + config.seed * 100_000
    scene = sim2d.sample_scene(seed, **config.scene_kwargs())
    field = viz.compute_flow_field(agent.policy, scene)
    result = viz.render(field, scene)
    paths["svg"].write_text(result.svg)
    paths["grid"].write_text(result.grid_csv)
    stage.write_manifest([agent_path], list(paths.values()))
    return paths


def run_pipeline(
    config: ExperimentConfig,
    stages: list[str] | None = None,
    *,
    source: str = "ensemble",
    n_queries: int = 15,
    compare: list[str] | None = None,
    verbose: bool = False,
) -> dict[str, object]:
    """Run the requested stages in dependency order; each one is idempotent."""
    chosen = list(stages) if stages is not None else list(STAGES)
    unknown = set(chosen) - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages: {sorted(unknown)}")
    results: dict[str, object] = {}
    for name in STAGES:
        if name not in chosen:
            continue
        if name == "raw":
            results["raw"] = stage_raw(config, verbose=verbose)
        elif name == "ensemble":
            results["ensemble"] = stage_ensemble(config, verbose=verbose)
        elif name == "query":
            results["query"] = stage_query(config, source, n_queries)
            results["label"] = stage_label_oracle(config, source, n_queries)
        elif name == "reward":
            results["reward"] = stage_reward(config, source, n_queries)
        elif name == "align":
            results["align"] = stage_align(config, source, n_queries)
        elif name == "eval":
            results["eval"] = stage_eval(config, compare)
        elif name == "viz":
            results["viz"] = stage_viz(config)
    return results
