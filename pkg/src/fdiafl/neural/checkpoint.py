"""Model checkpoint serialization.

Binary layout: 8-byte magic, uint32 tensor count, then per tensor a name
(uint16 length + utf-8), uint8 ndim, uint32 dims; after the table, every
tensor's float64 little-endian C-order data in table order. A JSON manifest
sits next to the binary and carries everything needed to rebuild and use the
model (layer sizes, scaler, data fingerprint). Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .params import ModelParams

MAGIC = b"MLPCKPT1"


class CheckpointError(ValueError):
    """Raised for corrupt checkpoints or manifest mismatches."""


def manifest_path(path) -> Path:
    return Path(str(path) + ".json")


def save_checkpoint(path, params: ModelParams, manifest: dict) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", len(params.layout.specs))]
    for spec in params.layout.specs:
        name = spec.name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<B", len(spec.shape)))
        chunks.append(struct.pack(f"<{len(spec.shape)}I", *spec.shape))
    for spec in params.layout.specs:
        chunks.append(np.ascontiguousarray(params.t[spec.name], dtype="<f8").tobytes())
    path.write_bytes(b"".join(chunks))
    manifest = dict(manifest)
    manifest["layer_sizes"] = list(params.layer_sizes)
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    path = Path(path)
    try:
        manifest = json.loads(manifest_path(path).read_text())
    except FileNotFoundError:
        raise CheckpointError(f"missing manifest {manifest_path(path)}")
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:8]!r}")
    offset = 8
    (n_tensors,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    table = []
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        table.append((name, shape))

    params = ModelParams(tuple(manifest["layer_sizes"]))
    expected = [(s.name, s.shape) for s in params.layout.specs]
    if [(n, tuple(s)) for n, s in table] != expected:
        raise CheckpointError(f"{path}: tensor table does not match manifest layer sizes")
    for name, shape in table:
        size = int(np.prod(shape)) * 8
        data = np.frombuffer(blob[offset : offset + size], dtype="<f8").reshape(shape)
        offset += size
        params.t[name][:] = data
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return params, manifest
