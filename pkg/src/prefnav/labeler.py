"""HTTP labeling service: serves query pairs, records choices, triggers retraining.

Endpoints (JSON in/out):

* ``GET  /pairs/next``        — next unlabeled pair, round-robin.
* ``POST /pairs/{id}/choice`` — body ``{"choice": "first"|"second"|"skip"}``.
* ``GET  /progress``          — labeled / total counts.
* ``POST /retrain``           — fit a reward model on the labels so far.

Dataset appends and retraining are serialized through one lock; reads are
safe from any number of clients.
"""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from . import sim2d
from .querygen import PreferencePair, load_pairs
from .storage import append_jsonl, read_jsonl

CHOICES = ("first", "second", "skip")


class UnknownPairError(KeyError):
    pass


class AlreadyLabeledError(RuntimeError):
    pass


class NoLabelsError(RuntimeError):
    pass


def _polyline(item) -> dict:
    """Trajectory geometry for rendering: points plus per-point timestamps."""
    poses = np.asarray(item.poses)
    times = [round(i * sim2d.DT, 3) for i in range(poses.shape[0])]
    return {
        "points": [[round(float(x), 4), round(float(y), 4)] for x, y in poses[:, :2]],
        "times": times,
        "min_human_distance": round(float(item.min_human_distance), 4),
    }


def pair_view(pair: PreferencePair) -> dict:
    """The payload the labeling UI renders for one query."""
    scene = pair.first.scene
    return {
        "pair_id": pair.pair_id,
        "source": pair.source,
        "scene": scene.to_json(),
        "first": _polyline(pair.first),
        "second": _polyline(pair.second),
    }


class LabelSession:
    """Round-robin serving of unlabeled pairs with an append-only label log."""

    def __init__(self, pairs_path: Path | str, labeled_path: Path | str, retrain_fn=None):
        self.pairs_path = Path(pairs_path)
        self.labeled_path = Path(labeled_path)
        self.retrain_fn = retrain_fn
        self._lock = threading.Lock()
        self.pairs: dict[str, PreferencePair] = {
            p.pair_id: p for p in load_pairs(self.pairs_path)
        }
        self.labels: dict[str, str] = {}
        if self.labeled_path.exists():
            for doc in read_jsonl(self.labeled_path):
                self.labels[doc["pair_id"]] = doc["choice"]
        self._queue = deque(
            pid for pid in self.pairs if pid not in self.labels
        )

    # -- core operations ---------------------------------------------------

    def next_pair(self) -> dict | None:
        """Serve each remaining pair once before any repeats; None when done."""
        with self._lock:
            if not self._queue:
                return None
            pair_id = self._queue.popleft()
            self._queue.append(pair_id)
            return pair_view(self.pairs[pair_id])

    def submit(self, pair_id: str, choice: str) -> dict:
        if choice not in CHOICES:
            raise ValueError(f"choice must be one of {CHOICES}")
        with self._lock:
            if pair_id not in self.pairs:
                raise UnknownPairError(pair_id)
            if pair_id in self.labels:
                raise AlreadyLabeledError(pair_id)
            labeled = replace(self.pairs[pair_id], choice=choice, annotator="human")
            append_jsonl(self.labeled_path, labeled.to_json())
            self.labels[pair_id] = choice
            try:
                self._queue.remove(pair_id)
            except ValueError:
                pass
            return self._progress_locked()

    def _progress_locked(self) -> dict:
        total = len(self.pairs)
        labeled = len(self.labels)
        return {"total": total, "labeled": labeled, "remaining": total - labeled}

    def progress(self) -> dict:
        with self._lock:
            return self._progress_locked()

    def labeled_pairs(self) -> list[PreferencePair]:
        with self._lock:
            return [
                replace(self.pairs[pid], choice=choice, annotator="human")
                for pid, choice in self.labels.items()
            ]

    def retrain(self) -> dict:
        usable = [p for p in self.labeled_pairs() if p.is_labeled()]
        if not usable:
            raise NoLabelsError("no non-skip labels recorded yet; label some pairs first")
        if self.retrain_fn is None:
            raise NoLabelsError("this session was started without a retrain target")
        with self._lock:
            return self.retrain_fn(usable)


class _Handler(BaseHTTPRequestHandler):
    session: LabelSession
    static_dir: Path | None = None

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, code: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()
        self.wfile.write(body)

    def _send_file(self, path: Path) -> None:
        types = {".html": "text/html", ".js": "text/javascript", ".css": "text/css"}
        body = path.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", types.get(path.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_OPTIONS(self):
        self._send(204, {})

    def do_GET(self):
        if self.path == "/pairs/next":
            view = self.session.next_pair()
            if view is None:
                self._send(200, {"done": True, "progress": self.session.progress()})
            else:
                view["progress"] = self.session.progress()
                self._send(200, view)
        elif self.path == "/progress":
            self._send(200, self.session.progress())
        elif self.static_dir is not None:
            rel = "index.html" if self.path in ("/", "") else self.path.lstrip("/")
            target = (self.static_dir / rel).resolve()
            if target.is_file() and self.static_dir.resolve() in target.parents:
                self._send_file(target)
            elif target == self.static_dir.resolve() / "index.html" and target.is_file():
                self._send_file(target)
            else:
                self._send(404, {"error": "not found", "path": self.path})
        else:
            self._send(404, {"error": "not found", "path": self.path})

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b"{}"
        try:
            body = json.loads(raw.decode("utf-8") or "{}")
        except json.JSONDecodeError:
            self._send(400, {"error": "invalid JSON body"})
            return

        if self.path.startswith("/pairs/") and self.path.endswith("/choice"):
            pair_id = self.path[len("/pairs/") : -len("/choice")]
            choice = body.get("choice")
            try:
                progress = self.session.submit(pair_id, choice)
            except UnknownPairError:
                self._send(404, {"error": "unknown pair id", "pair_id": pair_id})
            except AlreadyLabeledError:
                self._send(409, {"error": "pair already labeled", "pair_id": pair_id})
            except ValueError as exc:
                self._send(400, {"error": str(exc)})
            else:
                self._send(200, {"ok": True, "pair_id": pair_id, "progress": progress})
        elif self.path == "/retrain":
            try:
                result = self.session.retrain()
            except NoLabelsError as exc:
                self._send(400, {"error": str(exc)})
            else:
                self._send(200, result)
        else:
            self._send(404, {"error": "not found", "path": self.path})


def serve_labeler(
    session: LabelSession,
    port: int = 8710,
    *,
    static_dir: Path | str | None = None,
) -> ThreadingHTTPServer:
    """Bind the service (port 0 picks a free port); caller runs serve_forever()."""
    handler = type(
        "BoundHandler",
        (_Handler,),
        {"session": session, "static_dir": Path(static_dir) if static_dir else None},
    )
    return ThreadingHTTPServer(("127.0.0.1", port), handler)
