"""Versioned little-endian binary archive for named arrays plus JSON metadata.

Layout (all integers little-endian)::

    magic     8 bytes  b"FLOWARC\\x00"
    version   u32      currently 1
    meta_len  u32      length of the UTF-8 JSON metadata blob that follows
    meta      bytes    JSON object, keys sorted
    count     u32      number of arrays
    per array:
      name_len u16, name (UTF-8)
      dtype    u8      1 = float64, 2 = float32, 3 = int64
      ndim     u8, then ndim x u32 dimensions
      data     little-endian, C order

Arrays are written in sorted name order so identical contents give identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import ArchiveError

MAGIC = b"FLOWARC\x00"
VERSION = 1
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("<i8")}
_CODES = {np.dtype("float64"): 1, np.dtype("float32"): 2, np.dtype("int64"): 3}


def dumps(arrays: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> bytes:
    meta_blob = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_blob)), meta_blob, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.dtype.kind in "iub" and arr.dtype != np.int64:
            arr = arr.astype(np.int64)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise ArchiveError(f"{name}: unsupported dtype {arr.dtype}")
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    view = memoryview(blob)
    if bytes(view[:8]) != MAGIC:
        raise ArchiveError("not a flowaug archive (bad magic)")
    pos = 8
    try:
        version, meta_len = struct.unpack_from("<II", view, pos)
        pos += 8
        if version != VERSION:
            raise ArchiveError(f"unsupported archive version {version}")
        meta = json.loads(bytes(view[pos : pos + meta_len]).decode())
        pos += meta_len
        (count,) = struct.unpack_from("<I", view, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos : pos + name_len]).decode()
            pos += name_len
            code, ndim = struct.unpack_from("<BB", view, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", view, pos)
            pos += 4 * ndim
            dtype = _DTYPES[code]
            nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
            if pos + nbytes > len(view):
                raise ArchiveError(f"{name}: truncated data")
            arrays[name] = np.frombuffer(view[pos : pos + nbytes], dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"corrupt archive: {exc}") from None
    if pos != len(view):
        raise ArchiveError("trailing bytes after archive")
    return arrays, meta


def save_archive(path: str | Path, arrays: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(arrays, meta))
    return path


def load_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"archive not found: {path}")
    return loads(path.read_bytes())
