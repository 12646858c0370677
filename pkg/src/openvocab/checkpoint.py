"""Versioned binary checkpoint container.

Byte layout (all integers little-endian):

    bytes 0..3    magic ``OVCK``
    bytes 4..7    uint32 header length ``n``
    bytes 8..8+n  UTF-8 JSON header
    remainder     tensor payload

The JSON header holds ``format_version``, a free-form ``meta`` object, and
``tensors``: a list of ``{name, shape, offset}`` records sorted by name.
Each tensor is stored row-major as little-endian float64 at ``offset``
bytes into the payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError

__all__ = ["save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]

MAGIC = b"OVCK"
FORMAT_VERSION = 1


def save_checkpoint(path: str, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write ``meta`` and named float64 tensors to ``path``."""
    records = []
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        records.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload.extend(arr.tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta,
        "tensors": records,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<I", len(header_bytes)))
        handle.write(header_bytes)
        handle.write(bytes(payload))


def load_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back (meta, tensors) written by :func:`save_checkpoint`."""
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    if len(blob) < 8:
        raise DataError(f"{path}: truncated checkpoint")
    (header_len,) = struct.unpack("<I", blob[4:8])
    header_end = 8 + header_len
    if len(blob) < header_end:
        raise DataError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(blob[8:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DataError(f"{path}: corrupt checkpoint header") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version!r}")
    payload = blob[header_end:]
    tensors: dict[str, np.ndarray] = {}
    try:
        records = list(header["tensors"])
        meta = dict(header["meta"])
    except (KeyError, TypeError):
        raise DataError(f"{path}: malformed checkpoint header") from None
    for rec in records:
        try:
            name = rec["name"]
            shape = tuple(int(s) for s in rec["shape"])
            offset = int(rec["offset"])
        except (KeyError, TypeError, ValueError):
            raise DataError(f"{path}: malformed tensor record") from None
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 8 * count
        if offset < 0 or end > len(payload):
            raise DataError(f"{path}: tensor {name!r} exceeds payload")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float64)
    return meta, tensors
