"""Versioned binary container for model weights.

Layout: magic ``HQNW`` | u16 version | u32 header length | UTF-8 JSON header
| row-major little-endian float64 data. The header records free-form
metadata (configs, variant, topology) and one entry per tensor with its
name, shape and element offset.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"HQNW"
VERSION = 1


class WeightsFormatError(ValueError):
    pass


def save_weights(path, state: dict, meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, t in state.items():
        a = np.ascontiguousarray(t.detach().cpu().numpy() if torch.is_tensor(t) else t, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.ravel())
        offset += a.size
    header = json.dumps({"meta": meta or {}, "tensors": entries, "count": offset},
                        sort_keys=True).encode("utf-8")
    data = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(header)))
        fh.write(header)
        fh.write(data.astype("<f8").tobytes())


def load_weights(path) -> tuple[dict, dict]:
    """Returns ``(state, meta)`` with float64 tensors; ``load_state_dict`` casts to the model dtype."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise WeightsFormatError(f"{path}: not a weights file")
    version, hlen = struct.unpack("<HI", raw[4:10])
    if version != VERSION:
        raise WeightsFormatError(f"{path}: unsupported version {version}")
    header = json.loads(raw[10:10 + hlen].decode("utf-8"))
    data = np.frombuffer(raw[10 + hlen:], dtype="<f8")
    if data.size != header["count"]:
        raise WeightsFormatError(f"{path}: expected {header['count']} values, found {data.size}")
    state = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        state[e["name"]] = torch.from_numpy(data[e["offset"]:e["offset"] + n].reshape(e["shape"]).copy())
    return state, header["meta"]
