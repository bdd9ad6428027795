"""Versioned binary model container.

Layout (all integers little-endian)::

    magic    4 bytes  b"BXMD"
    version  uint16   container format version (currently 1)
    hlen     uint32   length of the header in bytes
    header   hlen     UTF-8 JSON, sorted keys:
                      {"format": 1, "kind": str, "meta": {...},
                       "tensors": [{"name", "shape", "offset", "nbytes"}, ...]}
    payload           raw float64 little-endian arrays, C order, at the
                      byte offsets listed in the header (relative to payload start)

Files contain no timestamps, so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"BXMD"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def dumps(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    tensors, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = a.tobytes()
        tensors.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"format": FORMAT_VERSION, "kind": kind, "meta": meta, "tensors": tensors},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<HI", FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> tuple[str, dict, dict[str, np.ndarray]]:
    if blob[:4] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if len(blob) < 10:
        raise ModelFormatError("truncated model file")
    version, hlen = struct.unpack("<HI", blob[4:10])
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    try:
        header = json.loads(blob[10:10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from None
    base = 10 + hlen
    arrays = {}
    for t in header["tensors"]:
        start = base + t["offset"]
        raw = blob[start:start + t["nbytes"]]
        if len(raw) != t["nbytes"]:
            raise ModelFormatError(f"truncated tensor {t['name']}")
        arrays[t["name"]] = np.frombuffer(raw, dtype="<f8").reshape(t["shape"]).astype(np.float64)
    return header["kind"], header["meta"], arrays


def save(path: Path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(kind, meta, arrays))


def load(path: Path) -> tuple[str, dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
