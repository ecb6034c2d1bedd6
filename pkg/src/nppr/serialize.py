"""Versioned weight snapshots: JSON documents of named row-major arrays."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class SnapshotError(Exception):
    """Raised for version mismatches or structurally corrupt snapshot files."""


def tensors_to_doc(named: dict[str, np.ndarray]) -> dict:
    return {
        name: {"shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).ravel().tolist()}
        for name, arr in named.items()
    }


def doc_to_tensors(doc: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, entry in doc.items():
        shape = tuple(int(s) for s in entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        expected = int(np.prod(shape)) if shape else 1
        if data.size != expected:
            raise SnapshotError(f"snapshot entry '{name}': {data.size} values for shape {shape}")
        out[name] = data.reshape(shape)
    return out


def save_snapshot(path, named: dict[str, np.ndarray], extra: dict | None = None) -> None:
    doc = {"format_version": FORMAT_VERSION, "tensors": tensors_to_doc(named)}
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_snapshot(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise SnapshotError(f"corrupt snapshot file {path}: {err}") from None
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise SnapshotError(f"snapshot file {path} has no format_version field")
    if doc["format_version"] != FORMAT_VERSION:
        raise SnapshotError(
            f"snapshot file {path}: format_version {doc['format_version']} unsupported "
            f"(expected {FORMAT_VERSION})")
    return doc_to_tensors(doc.get("tensors", {})), doc.get("extra", {})
