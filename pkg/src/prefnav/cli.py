"""Command-line entry points for the full pipeline.

Every verb reads the experiment root from ``--root`` or the ``PREFNAV_ROOT``
environment variable, exits 0 on success, and on failure prints one
machine-readable JSON error line to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import pipeline
from .config import ExperimentConfig

ROOT_ENV_VAR = "PREFNAV_ROOT"


def _build_config(args) -> ExperimentConfig:
    root = args.root or os.environ.get(ROOT_ENV_VAR)
    if root is None:
        raise ValueError(f"no experiment root: pass --root or set {ROOT_ENV_VAR}")
    preset = ExperimentConfig.desk if args.scale == "desk" else ExperimentConfig.paper
    return preset(seed=args.seed, root=Path(root))


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--root", type=Path, default=None, help=f"experiment directory (default ${ROOT_ENV_VAR})")
    parser.add_argument("--scale", choices=("paper", "desk"), default="desk")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefnav",
        description="Preference-aligned navigation pipeline: train, query, label, align, explain.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-raw", help="train the base navigation policy")
    _add_common(p)

    p = sub.add_parser("train-ensemble", help="train the behavior-diverse ensemble")
    _add_common(p)

    p = sub.add_parser("gen-queries", help="generate preference queries")
    _add_common(p)
    p.add_argument("--source", choices=("ensemble", "segment"), default="ensemble")
    p.add_argument("--n", type=int, default=15, help="number of query pairs")

    p = sub.add_parser("label", help="label queries with the oracle or a live session")
    _add_common(p)
    p.add_argument("--source", choices=("ensemble", "segment"), default="ensemble")
    p.add_argument("--n", type=int, default=15)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--oracle", action="store_true", help="simulated distance-preferring annotator")
    mode.add_argument("--serve", action="store_true", help="start the labeling HTTP service")
    p.add_argument("--port", type=int, default=8710)
    p.add_argument("--ui-dir", type=Path, default=None, help="built labeler UI to serve at /")

    p = sub.add_parser("train-reward", help="fit the preference reward model")
    _add_common(p)
    p.add_argument("--source", choices=("ensemble", "segment"), default="ensemble")
    p.add_argument("--n", type=int, default=15)

    p = sub.add_parser("align", help="offline-align the base policy with a reward model")
    _add_common(p)
    p.add_argument("--source", choices=("ensemble", "segment"), default="ensemble")
    p.add_argument("--n", type=int, default=15)
    p.add_argument("--model", type=Path, default=None, help="explicit reward-model checkpoint")

    p = sub.add_parser("eval", help="shared-scene evaluation report")
    _add_common(p)
    p.add_argument("--compare", type=str, default=None, help="comma list of aligned checkpoints (default: all)")

    p = sub.add_parser("streamplot", help="render the behavior stream plot")
    _add_common(p)
    p.add_argument("--policy", type=str, default="raw", help='"raw" or an aligned name like ensemble-15')
    p.add_argument("--scene-seed", type=int, default=None)

    p = sub.add_parser("pipeline", help="run several stages in order")
    _add_common(p)
    p.add_argument("--stages", type=str, default=",".join(pipeline.STAGES))
    p.add_argument("--source", choices=("ensemble", "segment"), default="ensemble")
    p.add_argument("--n", type=int, default=15)
    return parser


def _dispatch(args) -> dict:
    config = _build_config(args)
    if args.command == "train-raw":
        paths = pipeline.stage_raw(config, verbose=args.verbose)
        return {k: str(v) for k, v in paths.items()}
    if args.command == "train-ensemble":
        paths = pipeline.stage_ensemble(config, verbose=args.verbose)
        return {k: str(v) for k, v in paths.items()}
    if args.command == "gen-queries":
        return {"queries": str(pipeline.stage_query(config, args.source, args.n))}
    if args.command == "label":
        if args.oracle:
            return {"labeled": str(pipeline.stage_label_oracle(config, args.source, args.n))}
        return _serve(config, args)
    if args.command == "train-reward":
        return {"model": str(pipeline.stage_reward(config, args.source, args.n))}
    if args.command == "align":
        return {
            "aligned": str(
                pipeline.stage_align(
                    config, args.source, args.n, model_path=args.model, verbose=args.verbose
                )
            )
        }
    if args.command == "eval":
        compare = args.compare.split(",") if args.compare else None
        paths = pipeline.stage_eval(config, compare)
        return {k: str(v) for k, v in paths.items()}
    if args.command == "streamplot":
        paths = pipeline.stage_viz(config, args.policy, scene_seed=args.scene_seed)
        return {k: str(v) for k, v in paths.items()}
    if args.command == "pipeline":
        stages = [s for s in args.stages.split(",") if s]
        results = pipeline.run_pipeline(
            config, stages, source=args.source, n_queries=args.n, verbose=args.verbose
        )
        return {k: str(v) for k, v in results.items()}
    raise ValueError(f"unhandled command {args.command!r}")


def _serve(config: ExperimentConfig, args) -> dict:
    from .labeler import LabelSession, serve_labeler
    from .pipeline import query_path
    from .retrain import make_retrain_fn

    pairs_path = query_path(config, args.source, args.n)
    if not pairs_path.exists():
        raise pipeline.StageDependencyError("label", pairs_path)
    labeled_path = query_path(config, args.source, args.n, labeled=True).with_suffix(".human.jsonl")
    session = LabelSession(
        pairs_path, labeled_path, retrain_fn=make_retrain_fn(config, args.source, args.n)
    )
    ui_dir = args.ui_dir
    if ui_dir is None:
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = candidate if candidate.exists() else None
    server = serve_labeler(session, args.port, static_dir=ui_dir)
    host, port = server.server_address[:2]
    print(f"labeling service on http://{host}:{port}  (Ctrl-C to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return {"labeled": str(labeled_path)}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = _dispatch(args)
    except pipeline.StageDependencyError as exc:
        print(
            json.dumps({"error": "missing_dependency", "stage": exc.stage, "artifact": str(exc.artifact)}),
            file=sys.stderr,
        )
        return 2
    except (ValueError, RuntimeError, FileNotFoundError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
