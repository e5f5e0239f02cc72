"""Versioned binary documents for policies and fitted models.

Layout (all integers little-endian)::

    b"ADAPTBIN"            8 bytes magic
    version                u16
    kind                   8 bytes, ASCII, NUL padded
    header length          u32
    header                 UTF-8 JSON (sorted keys); includes "arrays": [[name, shape], ...]
    payload                float64 little-endian, arrays row-major in header order
    sha256                 32 bytes over everything above
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ADAPTBIN"
VERSION = 1


class DocumentError(ValueError):
    """Malformed, corrupted or mismatched binary document."""


def dumps(kind: str, header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    kind_b = kind.encode("ascii")
    if len(kind_b) > 8:
        raise ValueError("kind tag is limited to 8 ASCII characters")
    header = dict(header)
    header["arrays"] = [[name, list(np.shape(arr))] for name, arr in arrays.items()]
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in arrays.values())
    blob = MAGIC + struct.pack("<H", VERSION) + kind_b.ljust(8, b"\0") + struct.pack("<I", len(head))
    blob += head + body
    return blob + hashlib.sha256(blob).digest()


def loads(blob: bytes, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    if len(blob) < 54 or blob[:8] != MAGIC:
        raise DocumentError("not an adapt binary document")
    content, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(content).digest() != digest:
        raise DocumentError("checksum mismatch")
    (version,) = struct.unpack_from("<H", blob, 8)
    if version != VERSION:
        raise DocumentError(f"unsupported document version {version}")
    found = blob[10:18].rstrip(b"\0").decode("ascii")
    if kind is not None and found != kind:
        raise DocumentError(f"expected a {kind!r} document, found {found!r}")
    (hlen,) = struct.unpack_from("<I", blob, 18)
    header = json.loads(content[22 : 22 + hlen].decode("utf-8"))
    offset = 22 + hlen
    arrays = {}
    for name, shape in header.pop("arrays"):
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(content, dtype="<f8", count=count, offset=offset)
        arrays[name] = arr.reshape(shape).astype(float)
        offset += 8 * count
    if offset != len(content):
        raise DocumentError("payload length does not match header")
    header["kind"] = found
    return header, arrays


def write(path, kind: str, header: dict, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(kind, header, arrays))


def read(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes(), kind)
