"""Single-file tensor archive used for encoder weights and model checkpoints.

Layout (all integers little-endian)::

    bytes 0..7     magic b"DIFMARC1"
    bytes 8..15    uint64 header length H
    next H bytes   UTF-8 JSON header
    remainder      raw float32 little-endian tensor data, concatenated

The JSON header holds ``kind`` (a free-form tag such as ``"encoder"``),
``config`` (the producing configuration), ``extra`` (arbitrary metadata) and
``tensors``: a list of ``{"name", "shape", "dtype", "offset", "count"}``
records where ``offset`` and ``count`` are in float32 elements from the start
of the data section. ``dtype`` records the original torch dtype so integer
buffers round-trip.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
import torch

from .errors import ConfigMismatch

MAGIC = b"DIFMARC1"


def dumps(kind: str, config: Mapping[str, Any], tensors: Mapping[str, torch.Tensor],
          extra: Optional[Mapping[str, Any]] = None) -> bytes:
    records = []
    chunks = []
    offset = 0
    for name, t in tensors.items():
        arr = t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
        records.append({
            "name": name,
            "shape": list(t.shape),
            "dtype": str(t.dtype).replace("torch.", ""),
            "offset": offset,
            "count": int(arr.size),
        })
        chunks.append(arr.tobytes())
        offset += arr.size
    header = json.dumps(
        {"kind": kind, "config": dict(config), "extra": dict(extra or {}), "tensors": records},
        sort_keys=True,
    ).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> Tuple[Dict[str, Any], Dict[str, torch.Tensor]]:
    if blob[:8] != MAGIC:
        raise ValueError("not a diformer archive (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    data = np.frombuffer(blob, dtype="<f4", offset=16 + hlen)
    tensors = {}
    for rec in header["tensors"]:
        arr = data[rec["offset"]:rec["offset"] + rec["count"]].reshape(rec["shape"])
        t = torch.from_numpy(arr.astype(np.float32))
        tensors[rec["name"]] = t.to(getattr(torch, rec["dtype"]))
    return header, tensors


def save(path, kind, config, tensors, extra=None) -> None:
    Path(path).write_bytes(dumps(kind, config, tensors, extra))


def load(path, kind: Optional[str] = None, expected_config: Optional[Mapping[str, Any]] = None):
    """Read an archive, rejecting a different ``kind`` or a config mismatch."""
    header, tensors = loads(Path(path).read_bytes())
    if kind is not None and header["kind"] != kind:
        raise ConfigMismatch(f"{path}: archive kind {header['kind']!r}, expected {kind!r}")
    if expected_config is not None:
        expected = json.loads(json.dumps(dict(expected_config)))
        if header["config"] != expected:
            diff = sorted(k for k in set(expected) | set(header["config"])
                          if expected.get(k) != header["config"].get(k))
            raise ConfigMismatch(f"{path}: config mismatch in {diff}")
    return header, tensors


def checksum(tensors: Mapping[str, torch.Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(tensors[name].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
