"""Versioned binary checkpoint format.

Layout: magic, little-endian uint64 header length, JSON header, then raw
little-endian array bytes. The header carries the array manifest (name,
shape, dtype, byte offset), the network config, and opaque trainer state
(epoch, histories, RNG state) so a reload resumes training bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GCANETCK"
FORMAT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict):
    """Write named arrays plus JSON-serializable metadata."""
    manifest = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = le.tobytes()
        manifest.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta,
        "arrays": manifest,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (arrays, meta)."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        if header["format_version"] != FORMAT_VERSION:
            raise ValueError(
                f"{path}: unsupported checkpoint version {header['format_version']}"
            )
        base = f.tell()
        arrays = {}
        for entry in header["arrays"]:
            f.seek(base + entry["offset"])
            blob = f.read(entry["nbytes"])
            arr = np.frombuffer(blob, dtype=np.dtype(entry["dtype"]).newbyteorder("<"))
            arrays[entry["name"]] = (
                arr.astype(entry["dtype"]).reshape(entry["shape"]).copy()
            )
    return arrays, header["meta"]
