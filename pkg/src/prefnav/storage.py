"""File formats: array checkpoints, replay-buffer record streams, JSON Lines."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1
BUFFER_STREAM_VERSION = 1


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write named float arrays plus a JSON metadata block to an .npz container."""
    payload = {name: np.ascontiguousarray(a) for name, a in arrays.items()}
    header = dict(meta)
    header["format_version"] = CHECKPOINT_VERSION
    payload["__meta__"] = np.array(json.dumps(header, sort_keys=True))
    np.savez(path, **payload)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back a container written by :func:`save_arrays`."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        arrays = {name: data[name] for name in data.files if name != "__meta__"}
    return arrays, meta


def save_record_stream(path: str | Path, records: np.ndarray, header: dict) -> None:
    """Write a flat binary record stream: one JSON header line, then raw float64 rows."""
    records = np.ascontiguousarray(records, dtype=np.float64)
    head = dict(header)
    head.update(
        count=int(records.shape[0]),
        record_width=int(records.shape[1]) if records.ndim == 2 else 0,
        format_version=BUFFER_STREAM_VERSION,
    )
    with open(path, "wb") as fh:
        fh.write(json.dumps(head, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(records.tobytes())


def load_record_stream(path: str | Path) -> tuple[np.ndarray, dict]:
    """Read back a stream written by :func:`save_record_stream`."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        flat = np.frombuffer(fh.read(), dtype=np.float64)
    count, width = header["count"], header["record_width"]
    return flat.reshape(count, width).copy(), header


def append_jsonl(path: str | Path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")


def write_jsonl(path: str | Path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
