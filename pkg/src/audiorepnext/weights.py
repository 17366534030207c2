"""Portable, bit-exact binary serialization for graphs and bare tensors.

File layout (all integers little-endian):

====== ======= =====================================================
offset size    content
====== ======= =====================================================
0      4       magic ``b"ARIN"``
4      4       u32 format version (currently 1)
8      8       u64 header length H (multiple of 4, space-padded)
16     H       UTF-8 JSON header
16+H   ...     payload: concatenated float32 tensor data
====== ======= =====================================================

The header carries ``kind`` ("model" or "tensors"), the model config and
mode for models, and a tensor manifest of ``{name, dtype, shape,
byte_offset, byte_length}`` entries with offsets relative to the payload
start. Offsets must be 4-byte aligned, non-overlapping and in bounds;
round-tripping a graph is bit-identical.
"""

from __future__ import annotations

import json
import struct
from typing import Mapping

import numpy as np

from .errors import WeightFileError
from .model import ModelConfig, ModelGraph, build_from_tensors

MAGIC = b"ARIN"
VERSION = 1
_HEADER_PREFIX = struct.Struct("<4sIQ")


def _manifest_and_payload(tensors) -> tuple[list[dict], bytes]:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in tensors:
        a = np.ascontiguousarray(arr, dtype="<f4")
        raw = a.tobytes()
        manifest.append({
            "name": name,
            "dtype": "f32",
            "shape": list(a.shape),
            "byte_offset": offset,
            "byte_length": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    return manifest, b"".join(chunks)


def _write(path, header: dict, payload: bytes) -> None:
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    raw += b" " * (-len(raw) % 4)  # keep the payload 4-byte aligned in-file
    with open(path, "wb") as f:
        f.write(_HEADER_PREFIX.pack(MAGIC, VERSION, len(raw)))
        f.write(raw)
        f.write(payload)


def _read(path) -> tuple[dict, bytes]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER_PREFIX.size:
        raise WeightFileError("not a weight file: too short for the header")
    magic, version, hlen = _HEADER_PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise WeightFileError(f"not a weight file: bad magic {magic!r}")
    if version > VERSION:
        raise WeightFileError(f"unsupported format version {version} (runtime supports <= {VERSION})")
    if len(data) < _HEADER_PREFIX.size + hlen:
        raise WeightFileError("truncated header")
    try:
        header = json.loads(data[_HEADER_PREFIX.size:_HEADER_PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WeightFileError(f"corrupt header: {e}") from e
    return header, data[_HEADER_PREFIX.size + hlen:]


def _extract_tensors(header: dict, payload: bytes) -> dict[str, np.ndarray]:
    manifest = header.get("tensors")
    if not isinstance(manifest, list):
        raise WeightFileError("header carries no tensor manifest")
    spans = []
    out: dict[str, np.ndarray] = {}
    for entry in manifest:
        name = entry["name"]
        if entry.get("dtype") != "f32":
            raise WeightFileError(f"tensor '{name}': unsupported dtype {entry.get('dtype')!r}")
        off, length = int(entry["byte_offset"]), int(entry["byte_length"])
        shape = tuple(int(s) for s in entry["shape"])
        if off % 4 != 0:
            raise WeightFileError(f"tensor '{name}': misaligned byte offset {off}")
        if length != int(np.prod(shape, dtype=np.int64)) * 4:
            raise WeightFileError(f"tensor '{name}': byte length {length} does not match shape {shape}")
        if off < 0 or off + length > len(payload):
            raise WeightFileError(
                f"tensor '{name}' extends past end of file "
                f"(offset {off} + {length} bytes > payload of {len(payload)})")
        spans.append((off, off + length, name))
        if name in out:
            raise WeightFileError(f"duplicate tensor '{name}' in manifest")
        out[name] = np.frombuffer(payload, dtype="<f4", count=length // 4, offset=off).reshape(shape)
    spans.sort()
    for (a0, a1, an), (b0, _b1, bn) in zip(spans, spans[1:]):
        if b0 < a1:
            raise WeightFileError(f"tensors '{an}' and '{bn}' overlap in the payload")
    return out


# ---------------------------------------------------------------------------
# Model graphs
# ---------------------------------------------------------------------------

def save(g: ModelGraph, path) -> None:
    manifest, payload = _manifest_and_payload(g.named_tensors())
    header = {
        "kind": "model",
        "mode": g.mode,
        "config": g.config.to_dict(),
        "tensors": manifest,
    }
    _write(path, header, payload)


def load(path) -> ModelGraph:
    header, payload = _read(path)
    if header.get("kind") != "model":
        raise WeightFileError(f"expected a model weight file, got kind={header.get('kind')!r}")
    mode = header.get("mode")
    if mode not in ("train", "inference"):
        raise WeightFileError(f"bad mode {mode!r} in header")
    try:
        config = ModelConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as e:
        raise WeightFileError(f"bad model config in header: {e}") from e
    tensors = _extract_tensors(header, payload)
    try:
        return build_from_tensors(config, mode, tensors)
    except KeyError as e:
        raise WeightFileError(f"manifest does not cover the graph: first missing tensor {e.args[0]!r}") from e
    except ValueError as e:
        raise WeightFileError(str(e)) from e


# ---------------------------------------------------------------------------
# Bare tensor containers (spectrograms, probe fixtures)
# ---------------------------------------------------------------------------

def save_tensors(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    manifest, payload = _manifest_and_payload(tensors.items())
    header = {"kind": "tensors", "tensors": manifest}
    if meta:
        header["meta"] = meta
    _write(path, header, payload)


def load_tensors(path) -> dict[str, np.ndarray]:
    header, payload = _read(path)
    if header.get("kind") != "tensors":
        raise WeightFileError(f"expected a tensor container, got kind={header.get('kind')!r}")
    return _extract_tensors(header, payload)
