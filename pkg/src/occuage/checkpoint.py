"""Versioned, digest-protected binary container for named float32 arrays.

Layout (all integers little-endian):

    bytes 0..7    magic ``b"OCCUAGE\\x01"``
    bytes 8..11   uint32 header length ``L``
    bytes 12..12+L  UTF-8 JSON header (canonical: sorted keys, no spaces)
    remainder     payload: concatenated little-endian float32 arrays

The header carries ``version``, a sha256 hex ``digest`` of the payload,
an ``entries`` list of ``{name, shape, offset, size}`` records (offsets in
bytes from payload start, sizes in bytes), and arbitrary ``meta``. Entries
are sorted by name, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"OCCUAGE\x01"
VERSION = 1


def save_arrays(path: Path | str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Atomically write the container (temp file then rename)."""
    path = Path(path)
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        raw = arr.tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "size": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "version": VERSION,
        "digest": hashlib.sha256(payload).hexdigest(),
        "entries": entries,
        "meta": meta,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + payload
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load_arrays(path: Path | str) -> tuple[dict[str, np.ndarray], dict]:
    """Read and verify a container; returns (arrays, meta)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container (bad magic)")
    (header_len,) = struct.unpack_from("<I", blob, len(MAGIC))
    header_start = len(MAGIC) + 4
    header_end = header_start + header_len
    if len(blob) < header_end:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[header_start:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if header.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: unsupported container version {header.get('version')!r}"
        )
    payload = blob[header_end:]
    expected_size = sum(e["size"] for e in header["entries"])
    if len(payload) != expected_size:
        raise CheckpointError(
            f"{path}: truncated payload ({len(payload)} bytes, expected {expected_size})"
        )
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["digest"]:
        raise CheckpointError(f"{path}: payload digest mismatch, file is corrupt")
    arrays = {}
    for entry in header["entries"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["size"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
    return arrays, header["meta"]
