"""Checkpoint files: a JSON manifest plus a float32 binary blob.

Manifest schema:
    {"format_version": 1,
     "params": [{"name": str, "shape": [int, ...], "offset": int}, ...]}

The blob holds every tensor as little-endian 32-bit floats concatenated
in manifest order; ``offset`` counts float elements from the blob start.
A checkpoint named ``prefix`` occupies ``prefix.json`` and ``prefix.bin``.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(arrays: dict[str, np.ndarray], prefix: str | Path) -> None:
    """Write name->array mappings in manifest order (dict insertion order)."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    manifest = {"format_version": FORMAT_VERSION, "params": entries}
    _atomic_write_bytes(prefix.with_suffix(".json"),
                        json.dumps(manifest, indent=1).encode("utf-8"))
    _atomic_write_bytes(prefix.with_suffix(".bin"), b"".join(chunks))


def load_checkpoint(prefix: str | Path) -> dict[str, np.ndarray]:
    prefix = Path(prefix)
    with open(prefix.with_suffix(".json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')}")
    blob = np.fromfile(prefix.with_suffix(".bin"), dtype="<f4")
    out: dict[str, np.ndarray] = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + size > blob.size:
            raise CheckpointError(f"blob too small for parameter {entry['name']!r}")
        out[entry["name"]] = blob[start:start + size].reshape(shape).copy()
    return out
