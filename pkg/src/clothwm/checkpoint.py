"""Checkpoint container: JSON manifest of (name, shape, offset) plus one flat
little-endian float32 payload.

The same container stores model weights, optimizer moments, CMA-ES state and
best-controller genomes.  Round-trips are bit-exact for float32 inputs.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"WMCK"
VERSION = 1

_HEADER = struct.Struct("<4sHHI")  # magic, version, reserved, manifest byte length


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays; names are sorted so output bytes are deterministic."""
    names = sorted(arrays)
    manifest = []
    chunks = []
    offset = 0
    for name in names:
        a = np.ascontiguousarray(arrays[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.size
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, 0, len(blob)))
        f.write(blob)
        f.write(b"".join(chunks))
    os.replace(tmp, path)


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    magic, version, _, blob_len = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    manifest = json.loads(raw[_HEADER.size : _HEADER.size + blob_len])
    payload = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size + blob_len)
    out = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        out[entry["name"]] = payload[start : start + n].reshape(shape).copy()
    return out


def save_scalars(path: str | Path, arrays: dict[str, np.ndarray], scalars: dict[str, float]) -> None:
    """Convenience: store plain scalars as shape-(1,) arrays alongside `arrays`."""
    merged = dict(arrays)
    for k, v in scalars.items():
        merged[k] = np.array([v], dtype=np.float32)
    save_arrays(path, merged)
