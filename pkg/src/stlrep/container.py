"""Versioned binary container shared by autoencoders and classifiers.

Layout (all integers little-endian)::

    magic      b"STLR"
    version    uint16
    kind       uint8 length + ASCII tag ("cae", "svm", "tree", ...)
    header     uint32 length + UTF-8 JSON object
    n_tensors  uint32
    tensor*    uint16 name length + UTF-8 name,
               uint8 ndim, ndim x uint64 dims,
               prod(dims) x float64 ("<f8")
"""
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"STLR"
VERSION = 1


class FormatError(ValueError):
    """Malformed or truncated container."""


class VersionError(FormatError):
    """Container written by an unsupported format version."""


def dumps(kind: str, header: dict, tensors: dict) -> bytes:
    kind_b = kind.encode("ascii")
    head_b = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<B", len(kind_b)), kind_b,
             struct.pack("<I", len(head_b)), head_b, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)) + name_b)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("container is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes, expected_kind=None):
    """Parse a container; returns (kind, header, tensors)."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic: not an stlrep container")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise VersionError(f"unsupported container version {version} (expected {VERSION})")
    (klen,) = r.unpack("<B")
    try:
        kind = r.take(klen).decode("ascii")
        (hlen,) = r.unpack("<I")
        header = json.loads(r.take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupted header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError("corrupted header: not a JSON object")
    if expected_kind is not None and kind not in (
        (expected_kind,) if isinstance(expected_kind, str) else tuple(expected_kind)
    ):
        raise FormatError(f"container holds a {kind!r}, expected {expected_kind!r}")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        tensors[name] = arr
    if r.pos != len(data):
        raise FormatError("trailing bytes after last tensor")
    return kind, header, tensors


def save(path, kind, header, tensors):
    Path(path).write_bytes(dumps(kind, header, tensors))


def load(path, expected_kind=None):
    return loads(Path(path).read_bytes(), expected_kind)
