"""Binary feature dump: one file per image plus a JSON parameter sidecar.

Layout (little endian)::

    magic   8 bytes  b"VICSIFT1"
    count   uint32
    records count * (float32 x, y, scale, orientation; uint8[128] descriptor)

Descriptors are quantised as ``min(255, round(512 * v))``.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .sift import FeatureSet

MAGIC = b"VICSIFT1"
_RECORD = np.dtype([("kp", "<f4", (4,)), ("desc", "u1", (128,))])


def quantize_descriptors(desc: np.ndarray) -> np.ndarray:
    return np.minimum(np.floor(512.0 * np.asarray(desc, dtype=np.float64) + 0.5), 255).astype(np.uint8)


def dequantize_descriptors(q: np.ndarray) -> np.ndarray:
    v = q.astype(np.float64)
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return (v / norm).astype(np.float32)


def write_features(path: "str | os.PathLike", features: FeatureSet, params: dict | None = None,
                   image_size: tuple[int, int] | None = None) -> None:
    path = Path(path)
    rec = np.zeros(len(features), dtype=_RECORD)
    rec["kp"] = features.keypoints.astype(np.float32)
    rec["desc"] = quantize_descriptors(features.descriptors)
    path.write_bytes(MAGIC + np.uint32(len(features)).astype("<u4").tobytes() + rec.tobytes())
    sidecar = {"count": len(features), "params": params or {}, "quantization": "round(512*v) clamped to 255"}
    if image_size is not None:
        sidecar["image_size"] = list(image_size)
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_features(path: "str | os.PathLike") -> FeatureSet:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a feature dump (bad magic)")
    count = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    body = raw[12:]
    if len(body) != count * _RECORD.itemsize:
        raise ValueError(f"{path}: expected {count} records, file size disagrees")
    rec = np.frombuffer(body, dtype=_RECORD)
    return FeatureSet(rec["kp"].astype(np.float64), dequantize_descriptors(rec["desc"]))


# --- pairwise matches ---
#
#   magic   8 bytes  b"VICMATC1"
#   pairs   uint32
#   per pair: uint32 frame_a, frame_b, count; then count * (uint32 index_a, index_b)

MATCH_MAGIC = b"VICMATC1"


def write_matches(path: "str | os.PathLike", matches: dict) -> None:
    """Pairwise index matches keyed by ``(frame_a, frame_b)``; pairs written in sorted order."""
    parts = [MATCH_MAGIC, np.uint32(len(matches)).astype("<u4").tobytes()]
    for a, b in sorted(matches):
        m = np.asarray(matches[(a, b)], dtype=np.int64).reshape(-1, 2)
        if np.any(m < 0) or np.any(m > 0xFFFFFFFF):
            raise ValueError("match indices must fit in uint32")
        parts.append(np.array([a, b, len(m)], dtype="<u4").tobytes())
        parts.append(m.astype("<u4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_matches(path: "str | os.PathLike") -> dict:
    raw = Path(path).read_bytes()
    if raw[:8] != MATCH_MAGIC:
        raise ValueError(f"{path}: not a match file (bad magic)")
    n = int(np.frombuffer(raw, "<u4", 1, 8)[0])
    pos = 12
    out = {}
    for _ in range(n):
        if pos + 12 > len(raw):
            raise ValueError(f"{path}: truncated match file")
        a, b, count = (int(v) for v in np.frombuffer(raw, "<u4", 3, pos))
        pos += 12
        if pos + 8 * count > len(raw):
            raise ValueError(f"{path}: truncated match file")
        out[(a, b)] = np.frombuffer(raw, "<u4", 2 * count, pos).reshape(count, 2).astype(np.int64)
        pos += 8 * count
    if pos != len(raw):
        raise ValueError(f"{path}: trailing bytes after {n} pairs")
    return out
