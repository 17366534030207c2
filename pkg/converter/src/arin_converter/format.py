"""Standalone ARIN weight-file writer/reader.

Implements the runtime's documented binary contract without importing it:
``ARIN`` magic, u32 LE version, u64 LE header length, UTF-8 JSON header
(space-padded to a 4-byte multiple), float32 LE payload. Offsets in the
tensor manifest are relative to the payload start.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"ARIN"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def _manifest(tensors):
    entries, chunks, offset = [], [], 0
    for name, arr in tensors:
        a = np.ascontiguousarray(arr, dtype="<f4")
        raw = a.tobytes()
        entries.append({"name": name, "dtype": "f32", "shape": list(a.shape),
                        "byte_offset": offset, "byte_length": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    return entries, b"".join(chunks)


def _write(path, header: dict, payload: bytes) -> None:
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    raw += b" " * (-len(raw) % 4)
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(raw)))
        f.write(raw)
        f.write(payload)


def write_model(path, config: dict, mode: str, tensors) -> int:
    """Write a model file; returns the payload byte count."""
    entries, payload = _manifest(tensors)
    _write(path, {"kind": "model", "mode": mode, "config": config, "tensors": entries}, payload)
    return len(payload)


def write_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    entries, payload = _manifest(tensors.items())
    header = {"kind": "tensors", "tensors": entries}
    if meta:
        header["meta"] = meta
    _write(path, header, payload)


def read_file(path):
    """Return (header dict, {name: float32 array}) for any ARIN file."""
    with open(path, "rb") as f:
        data = f.read()
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not an ARIN file")
    if version > VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    payload = data[_PREFIX.size + hlen:]
    out = {}
    for e in header["tensors"]:
        count = e["byte_length"] // 4
        out[e["name"]] = np.frombuffer(payload, dtype="<f4", count=count,
                                       offset=e["byte_offset"]).reshape(e["shape"])
    return header, out
