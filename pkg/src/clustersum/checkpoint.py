"""Versioned binary model checkpoints.

Layout: an ASCII magic line, a JSON header line (format version, component
tag, model config, extra metadata, tensor names and shapes in payload
order), then the raw tensor payloads concatenated as little-endian float32,
row-major. Tensor order is the sorted name order, so files are byte-stable
for identical models.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CLUSTERSUM-CKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    component: str
    config: dict
    tensors: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)


def save_checkpoint(
    path: str | Path,
    component: str,
    config: dict,
    tensors: dict[str, np.ndarray],
    extra: dict | None = None,
) -> None:
    names = sorted(tensors)
    header = {
        "version": FORMAT_VERSION,
        "component": component,
        "config": config,
        "extra": extra or {},
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name in names:
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != MAGIC:
            raise ValueError(f"{path} is not a model checkpoint (bad magic)")
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        tensors: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise ValueError(f"truncated checkpoint payload for {entry['name']!r}")
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return Checkpoint(
        component=header["component"],
        config=header["config"],
        tensors=tensors,
        extra=header.get("extra", {}),
    )
