"""Parameter checkpoints: a JSON manifest plus one little-endian float64 blob."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

MANIFEST = "manifest.json"
BLOB = "params.f64"


def _atomic_write_bytes(path: Path, payload: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def save_arrays(directory, arrays: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    """Write ``arrays`` (sorted by name) and ``meta`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "f64", "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    _atomic_write_bytes(directory / BLOB, b"".join(chunks))
    manifest = {"blob": BLOB, "byte_order": "little", "tensors": entries, "meta": meta or {}}
    _atomic_write_bytes(directory / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True).encode())
    return directory


def load_arrays(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    raw = (directory / manifest["blob"]).read_bytes()
    arrays = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=e["offset"])
        arrays[e["name"]] = arr.reshape(tuple(e["shape"])).astype(np.float64)
    return arrays, manifest["meta"]
