"""Checkpoint I/O: a JSON manifest plus a flat little-endian float64 blob.

Layout of a checkpoint directory::

    manifest.json   {"format": 1, "config": {...}, "params": [{"name", "shape", "offset"}, ...]}
    params.bin      concatenated row-major '<f8' arrays, offsets in bytes

Writes go through a temporary file followed by ``os.replace``.
"""

import json
import os
import tempfile
from pathlib import Path

import numpy as np

MANIFEST = "manifest.json"
BLOB = "params.bin"


def atomic_write_bytes(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def save_checkpoint(path, arrays, config=None):
    """Write named arrays (and an optional JSON-able config) to directory ``path``."""
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        raw = arr.tobytes(order="C")
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": 1, "config": config or {}, "params": entries}
    atomic_write_bytes(path / BLOB, b"".join(chunks))
    atomic_write_text(path / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path):
    """Return ``(arrays, config)`` from a checkpoint directory."""
    path = Path(path)
    manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    blob = (path / BLOB).read_bytes()
    arrays = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        stop = start + 8 * count
        if stop > len(blob):
            raise ValueError(f"checkpoint blob truncated at parameter {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(blob[start:stop], dtype="<f8").reshape(shape).copy()
    return arrays, manifest.get("config", {})
