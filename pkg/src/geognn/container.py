"""Deterministic binary container for arrays plus a JSON header.

Layout::

    b"GEOGNN\\x00" + uint32 header length + JSON header + raw array bytes

The header records format version, user metadata, and for each array its
dtype, shape and byte offset. Arrays are written little-endian in C order,
so a write/read round trip is bit-exact and identical inputs always produce
identical files (no timestamps, unlike zip-based ``.npz``).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"GEOGNN\x00"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes(order="C")
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"format": "geognn-container", "version": FORMAT_VERSION, "kind": kind,
              "meta": meta, "arrays": entries}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs)
    atomic_write_bytes(path, payload)


def read_container(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ContainerError(f"{path}: not a geognn container")
    pos = len(MAGIC)
    try:
        (hlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        header = json.loads(data[pos:pos + hlen])
    except (struct.error, ValueError) as exc:
        raise ContainerError(f"{path}: corrupt header") from exc
    pos += hlen
    if header.get("version") != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported container version {header.get('version')}")
    if kind is not None and header.get("kind") != kind:
        raise ContainerError(f"{path}: expected kind {kind!r}, found {header.get('kind')!r}")
    arrays = {}
    for e in header["arrays"]:
        start = pos + e["offset"]
        buf = data[start:start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise ContainerError(f"{path}: truncated array {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header["meta"], arrays


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write to a temp file in the target directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".part", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
