"""Versioned binary checkpoint container.

Layout: 8-byte magic, u32 format version, u64 header length, UTF-8 JSON
header, then raw little-endian array bytes in header order. The header
echoes the producing config; loading verifies config equality before any
parameters are restored. Writes are byte-deterministic for identical
content, which the determinism suite relies on.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"CWACKPT\x00"
FORMAT_VERSION = 1


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_checkpoint(path, kind: str, config: dict, arrays: dict) -> None:
    """arrays: name → numpy array; insertion order is preserved."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        shape = list(arr.shape)  # before ascontiguousarray, which promotes 0-d to 1-d
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        entries.append(
            {"name": name, "dtype": arr.dtype.str, "shape": shape, "offset": offset}
        )
        blobs.append(blob)
        offset += len(blob)
    header = _canonical(
        {"kind": kind, "config": config, "arrays": entries, "payload_bytes": offset}
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint(path) -> tuple[str, dict, dict]:
    """Returns (kind, config, arrays)."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version, header_len = struct.unpack("<IQ", fh.read(12))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read(header["payload_bytes"])
    arrays = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(
            payload, dtype=dtype, count=count, offset=start
        ).reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
    return header["kind"], header["config"], arrays


def load_checkpoint(path, kind: str, expected_config: dict) -> dict:
    """Read arrays after verifying kind and exact config equality."""
    got_kind, got_config, arrays = read_checkpoint(path)
    if got_kind != kind:
        raise CheckpointError(f"{path}: kind {got_kind!r}, expected {kind!r}")
    if _canonical(got_config) != _canonical(expected_config):
        raise CheckpointError(f"{path}: config does not match the target network")
    return arrays
