"""Versioned single-file container for named arrays plus JSON metadata.

Layout (integers little-endian)::

    bytes 0-3     magic ``b"BGCK"``
    bytes 4-7     uint32 format version
    bytes 8-15    uint64 header length H
    bytes 16-     H bytes of UTF-8 JSON: {"arrays": [...], "meta": {...}}
    then          raw array payloads, each at the offset listed in the header

Keys are written in sorted order and the JSON is rendered canonically, so
equal contents always produce byte-identical files.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"BGCK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_DTYPES = {"f8": "<f8", "i8": "<i8"}


def _encode(a: np.ndarray) -> tuple[str, np.ndarray]:
    a = np.asarray(a)
    if np.issubdtype(a.dtype, np.integer) or a.dtype == np.bool_:
        return "i8", np.ascontiguousarray(a, dtype="<i8")
    return "f8", np.ascontiguousarray(a, dtype="<f8")


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> Path:
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        code, data = _encode(arrays[name])
        raw = data.tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(data.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"arrays": entries, "meta": dict(meta or {})}, sort_keys=True,
                        separators=(",", ":"), allow_nan=False).encode()
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise FormatError(f"{path}: too short for a checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size + header_len
    if len(blob) < start:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[_PREFIX.size:start])
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    arrays = {}
    for e in header["arrays"]:
        lo, hi = start + e["offset"], start + e["offset"] + e["nbytes"]
        if hi > len(blob):
            raise FormatError(f"{path}: truncated payload for {e['name']}")
        data = np.frombuffer(blob[lo:hi], dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        arrays[e["name"]] = data.astype(np.int64 if e["dtype"] == "i8" else np.float64)
    return arrays, header["meta"]


__all__ = ["MAGIC", "VERSION", "load_checkpoint", "save_checkpoint"]
