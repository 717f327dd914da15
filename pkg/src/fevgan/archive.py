"""ParameterArchive: a single-file store of named tensors plus a JSON manifest.

File layout (all integers little-endian)::

    b"FEVARCH1"              8-byte magic
    uint64 manifest_len
    manifest_len bytes       UTF-8 JSON manifest
    payload                  concatenated raw blocks

The manifest's ``blocks`` table lists ``name``, ``dtype`` (``<f4``, ``<i8``
or ``|u1``), ``shape``, ``offset`` and ``nbytes`` for every block, and
``checksum`` is the SHA-256 of the payload.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"FEVARCH1"
FORMAT_VERSION = 1
_DTYPES = {"<f4", "<i8", "|u1"}


class ArchiveError(Exception):
    pass


def _as_block(value) -> np.ndarray:
    arr = np.asarray(value)
    if arr.dtype.kind == "f":
        out = np.ascontiguousarray(arr, dtype="<f4")
    elif arr.dtype.kind in "iub" and arr.dtype != np.uint8:
        out = np.ascontiguousarray(arr, dtype="<i8")
    elif arr.dtype == np.uint8:
        out = np.ascontiguousarray(arr)
    else:
        raise ArchiveError(f"unsupported block dtype {arr.dtype}")
    # ascontiguousarray promotes 0-d arrays to 1-d
    return out.reshape(arr.shape)


def write_archive(path, blocks: Mapping[str, np.ndarray], manifest: dict | None = None) -> Path:
    """Atomically write ``blocks`` and ``manifest`` to ``path``."""
    path = Path(path)
    manifest = dict(manifest or {})
    table = []
    chunks = []
    offset = 0
    for name, value in blocks.items():
        arr = _as_block(value)
        raw = arr.tobytes()
        table.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    manifest["format_version"] = FORMAT_VERSION
    manifest["blocks"] = table
    manifest["checksum"] = hashlib.sha256(payload).hexdigest()
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")

    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise ArchiveError(f"failed to write archive {path} (partial file: {tmp}): {exc}") from exc
    return path


def read_manifest(path) -> dict:
    return read_archive(path)[1]


def read_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    """Load and verify an archive; returns ``(blocks, manifest)``."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ArchiveError(f"cannot read archive {path}: {exc}") from exc
    if len(data) < 16 or data[:8] != MAGIC:
        raise ArchiveError(f"{path} is not a parameter archive")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        manifest = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"{path}: corrupt manifest ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ArchiveError(f"{path}: unsupported format version {manifest.get('format_version')}")
    payload = data[16 + hlen :]
    if hashlib.sha256(payload).hexdigest() != manifest.get("checksum"):
        raise ArchiveError(f"{path}: checksum mismatch")
    blocks = {}
    for entry in manifest["blocks"]:
        if entry["dtype"] not in _DTYPES:
            raise ArchiveError(f"{path}: block {entry['name']} has unsupported dtype {entry['dtype']}")
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]))
        if arr.size != int(np.prod(entry["shape"], dtype=np.int64)):
            raise ArchiveError(f"{path}: block {entry['name']} does not match its declared shape")
        blocks[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return blocks, manifest


def tensor_checksum(blocks: Mapping[str, np.ndarray]) -> str:
    """Order-independent SHA-256 over named arrays."""
    h = hashlib.sha256()
    for name in sorted(blocks):
        arr = _as_block(blocks[name])
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()
