"""Little-endian named-tensor container (``VSRG`` files).

Layout::

    b"VSRG" | version:u32 | count:u32
    count x ( name_len:u32 | name:utf8 | rank:u32 | dims:u64[rank] | dtype:u32 | offset:u64 )
    zero padding, then each tensor's raw bytes starting on a 64-byte boundary

``offset`` is absolute from the start of the file.
"""

from __future__ import annotations

import io
import json
import os
import struct
from typing import Dict, Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"VSRG"
VERSION = 1
ALIGN = 64

DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i8"): 2,
    np.dtype("u1"): 3,
}
CODE_DTYPES = {code: dt for dt, code in DTYPE_CODES.items()}


def _aligned(n: int) -> int:
    return (n + ALIGN - 1) // ALIGN * ALIGN


def _normalize(arr) -> np.ndarray:
    arr = np.asarray(arr)
    kind, size = arr.dtype.kind, arr.dtype.itemsize
    if kind == "f" and size == 4:
        dt = np.dtype("<f4")
    elif kind == "f" and size == 8:
        dt = np.dtype("<f8")
    elif kind == "u" and size == 1:
        dt = np.dtype("u1")
    elif kind in "iub":
        dt = np.dtype("<i8")
    else:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    return np.asarray(arr, dtype=dt, order="C")


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    items = [(name, _normalize(arr)) for name, arr in tensors.items()]
    header_len = 12
    for name, arr in items:
        header_len += 4 + len(name.encode("utf-8")) + 4 + 8 * arr.ndim + 4 + 8
    offsets = []
    cursor = _aligned(header_len)
    for _, arr in items:
        offsets.append(cursor)
        cursor = _aligned(cursor + arr.nbytes)

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(items)))
    for (name, arr), off in zip(items, offsets):
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(struct.pack("<IQ", DTYPE_CODES[arr.dtype], off))
    for (_, arr), off in zip(items, offsets):
        buf.write(b"\0" * (off - buf.tell()))
        buf.write(arr.tobytes(order="C"))
    buf.write(b"\0" * (cursor - buf.tell()))
    return buf.getvalue()


def loads(data: bytes) -> Dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise FormatError("not a VSRG tensor file (bad magic)")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise FormatError(f"unsupported VSRG version {version}")
        pos = 12
        out: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            code, offset = struct.unpack_from("<IQ", data, pos)
            pos += 12
            if code not in CODE_DTYPES:
                raise FormatError(f"tensor {name!r}: unknown dtype code {code}")
            if offset % ALIGN:
                raise FormatError(f"tensor {name!r}: offset {offset} is not {ALIGN}-byte aligned")
            dt = CODE_DTYPES[code]
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            end = offset + n * dt.itemsize
            if end > len(data):
                raise FormatError(f"tensor {name!r} runs past end of file")
            if name in out:
                raise FormatError(f"duplicate tensor name {name!r}")
            out[name] = np.frombuffer(data, dtype=dt, count=n, offset=offset).reshape(dims).copy()
    except struct.error as exc:
        raise FormatError(f"truncated VSRG header: {exc}") from exc
    return out


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(dumps(tensors))


def load(path: str | os.PathLike) -> Dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return loads(f.read())


def pack_json(obj) -> np.ndarray:
    raw = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return np.frombuffer(raw, dtype=np.uint8).copy()


def unpack_json(arr: np.ndarray):
    return json.loads(bytes(np.asarray(arr, dtype=np.uint8)).decode("utf-8"))


def pack_text(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def unpack_text(arr: np.ndarray) -> str:
    return bytes(np.asarray(arr, dtype=np.uint8)).decode("utf-8")
