"""Versioned binary container for checkpoints and fitted models.

Layout::

    b"ILDC"            4 bytes magic
    version            uint16 LE
    header_len         uint32 LE
    header             UTF-8 JSON: {"kind", "meta", "arrays": [{"name", "shape"}]}
    blocks             float64 LE, one per array, in header order
"""
import json
import struct

import numpy as np

from .errors import DataError

MAGIC = b"ILDC"
VERSION = 1


def dumps(kind, arrays, meta=None):
    header = {
        "kind": kind,
        "meta": meta or {},
        "arrays": [{"name": name, "shape": list(np.shape(a))} for name, a in arrays],
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(raw)), raw]
    for _, a in arrays:
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(buf, kind=None):
    """Parse a container; returns ``(meta, {name: array})``."""
    if buf[:4] != MAGIC or len(buf) < 10:
        raise DataError("not a model container (bad magic bytes)")
    version, hlen = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise DataError(f"unsupported container version {version}")
    off = 10
    try:
        header = json.loads(buf[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DataError("corrupt container header") from None
    off += hlen
    if kind is not None and header["kind"] != kind:
        raise DataError(f"expected a {kind!r} container, found {header['kind']!r}")
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        if off + 8 * n > len(buf):
            raise DataError(f"container truncated inside array {entry['name']!r}")
        a = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape)
        arrays[entry["name"]] = a.astype(np.float64)
        off += 8 * n
    if off != len(buf):
        raise DataError("trailing bytes in model container")
    return header["meta"], arrays


def peek(path):
    """``(kind, meta)`` of a container file without decoding its arrays."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(10)
            if head[:4] != MAGIC or len(head) < 10:
                raise DataError(f"{path} is not a model container")
            version, hlen = struct.unpack_from("<HI", head, 4)
            if version != VERSION:
                raise DataError(f"unsupported container version {version}")
            header = json.loads(fh.read(hlen).decode("utf-8"))
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}") from None
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DataError(f"{path}: corrupt container header") from None
    return header["kind"], header["meta"]


def save(path, kind, arrays, meta=None):
    with open(path, "wb") as fh:
        fh.write(dumps(kind, arrays, meta))


def load(path, kind=None):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}") from None
    return loads(buf, kind)
