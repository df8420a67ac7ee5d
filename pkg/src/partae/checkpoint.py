"""Versioned binary container for network parameters.

Layout: magic ``LPMN`` | uint32 format version | uint32 header length |
UTF-8 JSON header | raw tensor payload. The header carries the layer-spec
list (tensor names and shapes, in declaration order) plus an arbitrary
``meta`` dict for the owning model. Payload tensors are 32-bit little-endian
reals, row-major, concatenated in header order.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"LPMN"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


def write_atomic(path: str, payload: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Serialize named tensors (declaration order = dict order) plus meta."""
    specs = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        specs.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.astype("<f4").tobytes())
    header = json.dumps({"tensors": specs, "meta": meta or {}}).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", FORMAT_VERSION, len(header))
    out += header
    for blob in blobs:
        out += blob
    write_atomic(path, bytes(out))


def load(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container back as ({name: float32 array}, meta)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header_end = 12 + header_len
    header = json.loads(raw[12:header_end].decode("utf-8"))
    tensors = {}
    offset = header_end
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload at tensor {spec['name']!r}")
        tensors[spec["name"]] = np.frombuffer(
            raw, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return tensors, header.get("meta", {})
