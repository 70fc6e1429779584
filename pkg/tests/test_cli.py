"""Config defaults, pipeline staging and manifests, labeler service, CLI verbs."""

import itertools
import json
import threading

import numpy as np
import pytest

import prefnav.cli as cli
from prefnav import pipeline, querygen, sim2d
from prefnav.config import ExperimentConfig
from prefnav.ensemble import Ensemble, EnsembleConfig
from prefnav.labeler import (
    AlreadyLabeledError,
    LabelSession,
    NoLabelsError,
    UnknownPairError,
    serve_labeler,
)

SCENES = {"n_obstacles": 0, "arena": 8.0, "goal_dist": (2.0, 4.0)}


class ScriptPolicy:
    def __init__(self, bias=0.0):
        self.bias = bias

    def __call__(self, obs_vec):
        return np.array([1.0, np.clip(obs_vec[31] / np.pi * 4.0 + self.bias, -1, 1)])


class FakeMember:
    def __init__(self, policy):
        self.policy = policy


def make_pairs(n=5, tmp_path=None):
    group = Ensemble(
        members=[FakeMember(ScriptPolicy(0.0)), FakeMember(ScriptPolicy(0.15))],
        buffers=[],
        config=EnsembleConfig(n_members=2),
    )
    pairs = querygen.generate_ensemble_queries(
        group, itertools.count(20_000), n, rng=np.random.default_rng(0), scene_kwargs=SCENES
    )
    if tmp_path is not None:
        querygen.save_pairs(tmp_path / "pairs.jsonl", pairs)
    return pairs


# -- config ---------------------------------------------------------------------

def test_defaults_reproduce_published_table():
    cfg = ExperimentConfig()
    assert cfg.discount == 0.98
    assert cfg.ensemble_train_steps == 25_000
    assert cfg.buffer_capacity == 1_000_000
    assert cfg.pooled_rays == 30
    assert cfg.reward_goal == 20.0
    assert cfg.reward_collision == -1.2
    assert cfg.reward_timeout == -20.0
    assert cfg.reward_loop == -2.0
    assert cfg.n_members == 4
    assert cfg.kappa == 0.0625
    assert cfg.dist_slope == pytest.approx(1 / 8)
    assert cfg.dist_intercept == pytest.approx(1 / 4)
    assert cfg.segment_length == 20
    assert cfg.blend_lambda == 0.06


def test_config_constants_match_simulator():
    cfg = ExperimentConfig()
    assert cfg.reward_goal == sim2d.REWARD_GOAL
    assert cfg.reward_collision == sim2d.REWARD_COLLISION
    assert cfg.reward_timeout == sim2d.REWARD_TIMEOUT
    assert cfg.reward_loop == sim2d.REWARD_LOOP
    assert cfg.pooled_rays == sim2d.POOLED_RAYS


def test_desk_preset_only_shrinks():
    paper = ExperimentConfig()
    desk = ExperimentConfig.desk()
    assert desk.ensemble_train_steps < paper.ensemble_train_steps
    assert desk.trunk_widths[0] < paper.trunk_widths[0]
    assert desk.eval_scenes < paper.eval_scenes
    assert desk.n_members <= paper.n_members
    # Reward and regularization constants are untouched.
    for field in ("discount", "kappa", "dist_slope", "dist_intercept", "segment_length",
                  "blend_lambda", "reward_goal", "reward_collision", "reward_timeout", "reward_loop"):
        assert getattr(desk, field) == getattr(paper, field)


def test_config_json_round_trip(tmp_path):
    cfg = ExperimentConfig.desk(seed=3, root=tmp_path)
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg


# -- pipeline staging ---------------------------------------------------------------

def micro_config(tmp_path, **overrides):
    values = dict(
        trunk_widths=(16, 12),
        raw_train_steps=300,
        n_members=2,
        ensemble_train_steps=8,
        eval_scenes=2,
        n_obstacles=0,
        arena=6.0,
        goal_dist=(2.0, 3.0),
        alignment_epochs=1,
        alignment_updates=5,
        reward_epochs=2,
        query_pool_scenes=2,
        buffer_capacity=20_000,
    )
    values.update(overrides)
    return ExperimentConfig.desk(seed=0, root=tmp_path / "exp", **values)


def test_stage_query_without_ensemble_raises_dependency_error(tmp_path):
    cfg = micro_config(tmp_path)
    with pytest.raises(pipeline.StageDependencyError) as err:
        pipeline.stage_query(cfg, "ensemble", 2)
    assert "ensemble" in str(err.value)


def test_stage_align_without_model_raises(tmp_path):
    cfg = micro_config(tmp_path)
    pipeline.stage_raw(cfg)
    with pytest.raises(pipeline.StageDependencyError):
        pipeline.stage_align(cfg, "ensemble", 2)


def test_raw_stage_outputs_and_idempotence(tmp_path):
    cfg = micro_config(tmp_path)
    paths = pipeline.stage_raw(cfg)
    for p in paths.values():
        assert p.exists()
    manifest = json.loads((cfg.root / "raw" / "manifest.json").read_text())
    assert manifest["stage"] == "raw"
    assert set(manifest["outputs"]) == {"raw/agent.npz", "raw/buffer.bin", "raw/history.csv"}
    before = (cfg.root / "raw" / "agent.npz").read_bytes()
    pipeline.stage_raw(cfg)  # skipped: unchanged inputs
    assert (cfg.root / "raw" / "agent.npz").read_bytes() == before


def test_raw_stage_regenerates_bit_identically(tmp_path):
    cfg = micro_config(tmp_path)
    paths = pipeline.stage_raw(cfg)
    blob = paths["agent"].read_bytes()
    paths["agent"].unlink()
    pipeline.stage_raw(cfg)
    assert paths["agent"].read_bytes() == blob


def test_full_micro_pipeline(tmp_path):
    cfg = micro_config(tmp_path)
    results = pipeline.run_pipeline(
        cfg, ["raw", "ensemble", "query", "reward", "align", "eval"], source="segment", n_queries=3
    )
    assert (cfg.root / "queries" / "segment-3.jsonl").exists()
    assert (cfg.root / "queries" / "segment-3-labeled.jsonl").exists()
    assert (cfg.root / "reward" / "segment-3.npz").exists()
    assert (cfg.root / "align" / "segment-3.npz").exists()
    report = (cfg.root / "eval" / "report.csv").read_text()
    assert "raw" in report and "segment-3" in report
    docs = json.loads((cfg.root / "eval" / "report.json").read_text())
    assert set(docs) == {"raw", "segment-3"}


def test_unknown_stage_rejected(tmp_path):
    cfg = micro_config(tmp_path)
    with pytest.raises(ValueError):
        pipeline.run_pipeline(cfg, ["florble"])


# -- labeler session -------------------------------------------------------------------

def test_round_robin_serves_all_before_repeat(tmp_path):
    make_pairs(4, tmp_path)
    session = LabelSession(tmp_path / "pairs.jsonl", tmp_path / "labeled.jsonl")
    served = [session.next_pair()["pair_id"] for _ in range(4)]
    assert len(set(served)) == 4
    again = [session.next_pair()["pair_id"] for _ in range(4)]
    assert served == again  # same rotation order


def test_submit_and_progress(tmp_path):
    make_pairs(3, tmp_path)
    session = LabelSession(tmp_path / "pairs.jsonl", tmp_path / "labeled.jsonl")
    view = session.next_pair()
    progress = session.submit(view["pair_id"], "first")
    assert progress == {"total": 3, "labeled": 1, "remaining": 2}
    with pytest.raises(AlreadyLabeledError):
        session.submit(view["pair_id"], "second")
    with pytest.raises(UnknownPairError):
        session.submit("nope", "first")
    with pytest.raises(ValueError):
        session.submit(session.next_pair()["pair_id"], "left")
    # Labels persist on disk and reload.
    resumed = LabelSession(tmp_path / "pairs.jsonl", tmp_path / "labeled.jsonl")
    assert resumed.progress()["labeled"] == 1
    stored = querygen.load_pairs(tmp_path / "labeled.jsonl")
    assert stored[0].annotator == "human"


def test_skip_labels_excluded_from_retrain(tmp_path):
    make_pairs(2, tmp_path)
    calls = []
    session = LabelSession(
        tmp_path / "pairs.jsonl", tmp_path / "labeled.jsonl", retrain_fn=lambda pairs: calls.append(pairs) or {"ok": 1}
    )
    view = session.next_pair()
    session.submit(view["pair_id"], "skip")
    with pytest.raises(NoLabelsError):
        session.retrain()
    view = session.next_pair()
    session.submit(view["pair_id"], "second")
    assert session.retrain() == {"ok": 1}
    assert len(calls[0]) == 1


def test_completed_session_serves_none(tmp_path):
    make_pairs(1, tmp_path)
    session = LabelSession(tmp_path / "pairs.jsonl", tmp_path / "labeled.jsonl")
    session.submit(session.next_pair()["pair_id"], "first")
    assert session.next_pair() is None


def test_pair_view_payload_shape(tmp_path):
    pairs = make_pairs(1, tmp_path)
    session = LabelSession(tmp_path / "pairs.jsonl", tmp_path / "labeled.jsonl")
    view = session.next_pair()
    assert set(view) >= {"pair_id", "scene", "first", "second"}
    assert "obstacles" in view["scene"] and "goal" in view["scene"]
    assert len(view["first"]["points"]) == len(view["first"]["times"])
    assert view["first"]["points"][0] == view["second"]["points"][0]  # shared start


# -- labeler over HTTP -------------------------------------------------------------------

def test_http_round_trip(tmp_path):
    import urllib.request

    make_pairs(2, tmp_path)
    session = LabelSession(tmp_path / "pairs.jsonl", tmp_path / "labeled.jsonl")
    server = serve_labeler(session, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        with urllib.request.urlopen(f"{base}/pairs/next") as resp:
            view = json.loads(resp.read())
        assert "pair_id" in view
        req = urllib.request.Request(
            f"{base}/pairs/{view['pair_id']}/choice",
            data=json.dumps({"choice": "first"}).encode(),
            method="POST",
            headers={"Content-Type": "application/json"},
        )
        with urllib.request.urlopen(req) as resp:
            ack = json.loads(resp.read())
        assert ack["progress"]["labeled"] == 1
        with urllib.request.urlopen(f"{base}/progress") as resp:
            assert json.loads(resp.read())["labeled"] == 1
        # Conflict on double label.
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(req)
        assert err.value.code == 409
        # Unknown pair.
        bad = urllib.request.Request(
            f"{base}/pairs/zzz/choice", data=b'{"choice": "first"}', method="POST"
        )
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(bad)
        assert err.value.code == 404
        # Retrain without usable labels is a 400 (only when retrain_fn absent counts too).
        retrain = urllib.request.Request(f"{base}/retrain", data=b"{}", method="POST")
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(retrain)
        assert err.value.code == 400
    finally:
        server.shutdown()


# -- CLI ------------------------------------------------------------------------------

def test_cli_requires_root(monkeypatch, capsys):
    monkeypatch.delenv(cli.ROOT_ENV_VAR, raising=False)
    code = cli.main(["train-raw"])
    assert code == 1
    err = capsys.readouterr().err
    assert json.loads(err.strip())["error"] == "ValueError"


def test_cli_dependency_error_is_machine_readable(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.ROOT_ENV_VAR, str(tmp_path / "exp"))
    code = cli.main(["gen-queries", "--source", "ensemble", "--n", "2"])
    assert code == 2
    doc = json.loads(capsys.readouterr().err.strip())
    assert doc["error"] == "missing_dependency"
    assert doc["stage"] == "query"


def test_cli_streamplot_unknown_policy(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.ROOT_ENV_VAR, str(tmp_path / "exp"))
    code = cli.main(["streamplot", "--policy", "ensemble-15"])
    assert code == 2


def test_cli_parser_covers_all_verbs():
    parser = cli.build_parser()
    for verb in (
        "train-raw", "train-ensemble", "gen-queries", "label", "train-reward",
        "align", "eval", "streamplot", "pipeline",
    ):
        args = parser.parse_args([verb, "--root", "x"] + (["--oracle"] if verb == "label" else []))
        assert args.command == verb
