"""Versioned binary container for model weights and run snapshots.

Layout: 8-byte magic, u32 little-endian header length, canonical JSON
header (kind, params, metadata, array manifest), then the raw array bytes
in manifest order. Writing the same content twice produces identical
bytes, which the determinism tests rely on.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

_MAGIC = b"SIBCHKP1"
_FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """kind tags what the arrays mean ("ann", "snn", "gamin")."""

    kind: str
    params: dict
    arrays: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)


def save_checkpoint(checkpoint: Checkpoint, path: str) -> None:
    manifest = []
    blobs = []
    for name in sorted(checkpoint.arrays):
        arr = np.ascontiguousarray(checkpoint.arrays[name])
        manifest.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
        })
        blobs.append(arr.tobytes())
    header = json.dumps(
        {
            "format_version": _FORMAT_VERSION,
            "kind": checkpoint.kind,
            "params": checkpoint.params,
            "metadata": checkpoint.metadata,
            "arrays": manifest,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DataError(
                f"{path}: bad checkpoint magic {magic!r}, expected {_MAGIC!r}"
            )
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise DataError(f"{path}: truncated checkpoint header length")
        header_len = int.from_bytes(raw_len, "little")
        raw_header = fh.read(header_len)
        if len(raw_header) != header_len:
            raise DataError(f"{path}: truncated checkpoint header")
        try:
            header = json.loads(raw_header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: corrupt checkpoint header: {exc}") from exc
        if header.get("format_version") != _FORMAT_VERSION:
            raise DataError(
                f"{path}: unsupported checkpoint version "
                f"{header.get('format_version')!r}"
            )
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            blob = fh.read(dtype.itemsize * count)
            if len(blob) != dtype.itemsize * count:
                raise DataError(
                    f"{path}: truncated checkpoint array {entry['name']!r}"
                )
            arrays[entry["name"]] = (
                np.frombuffer(blob, dtype=dtype).reshape(shape).copy()
            )
    return Checkpoint(kind=header["kind"], params=header["params"],
                      arrays=arrays, metadata=header["metadata"])
