"""Deterministic binary checkpoint container.

Layout: magic ``TCKPT1\\n``, 8-byte little-endian header length, UTF-8 JSON
header, then raw little-endian float64 tensor buffers. The header lists
tensors sorted by name with their shapes and byte offsets plus a free-form
``meta`` dict (model kind, config, graph, network, normalization stats).
Identical inputs produce identical bytes, so checkpoints diff and hash
cleanly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TCKPT1\n"


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    names = sorted(tensors)
    entries = []
    offset = 0
    buffers = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        raw = arr.tobytes()
        buffers.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in buffers:
            fh.write(raw)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    base = len(MAGIC)
    (header_len,) = struct.unpack("<Q", blob[base:base + 8])
    try:
        header = json.loads(blob[base + 8:base + 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    data_start = base + 8 + header_len
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = data_start + entry["offset"]
        end = start + count * 8
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated tensor data for {entry['name']!r}")
        arr = np.frombuffer(blob[start:end], dtype="<f8").reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float64)
    return tensors, header["meta"]


def load_model(path):
    """Rebuild whichever forecaster kind the checkpoint holds."""
    tensors, meta = read_checkpoint(path)
    kind = meta.get("kind")
    if kind == "tripcast":
        from .model import TripCastModel
        return TripCastModel.from_checkpoint(tensors, meta)
    if kind == "gru_baseline":
        from .bench import GRUBaseline
        return GRUBaseline.from_checkpoint(tensors, meta)
    raise CheckpointError(f"{path}: unknown model kind {kind!r}")
