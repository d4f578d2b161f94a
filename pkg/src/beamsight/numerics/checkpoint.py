"""Weight checkpoint files.

Layout::

    b"BSW1"                      magic
    u32 little-endian            header length in bytes
    header                       UTF-8 JSON: {"tensors": {name: shape, ...}, "config": ..., "seed": ...}
    payload                      float64 little-endian, tensors concatenated in header order
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"BSW1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], config: Any = None, seed: int | None = None,
                    extra: dict | None = None) -> None:
    header = {
        "tensors": {name: list(np.shape(a)) for name, a in arrays.items()},
        "config": config,
        "seed": seed,
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=False, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[4:8])
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    offset = 8 + hlen
    arrays: dict[str, np.ndarray] = {}
    for name, shape in header["tensors"].items():
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: payload truncated at tensor {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return arrays, header
