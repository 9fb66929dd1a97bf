"""LPCK checkpoint files.

Layout (all integers little-endian)::

    b"LPCK" | u32 version (1) | u32 tensor count | u32 flags
    per tensor: u16 name length | UTF-8 name | u8 dtype (0=f32, 1=f64)
                | u8 rank | rank x u32 dims | raw little-endian payload

Flag bit 0 marks that optimizer state tensors (names starting ``adam.``)
are present.
"""

import hashlib
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"LPCK"
VERSION = 1
FLAG_OPTIMIZER = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def encode_checkpoint(tensors):
    flags = FLAG_OPTIMIZER if any(k.startswith("adam.") for k in tensors) else 0
    parts = [MAGIC, struct.pack("<III", VERSION, len(tensors), flags)]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        code = _CODES.get(arr.dtype)
        if code is None:
            raise FormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def decode_checkpoint(buf):
    if buf[:4] != MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    if len(buf) < 16:
        raise FormatError("truncated checkpoint header", len(buf))
    version, count, _flags = struct.unpack_from("<III", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    pos = 16
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nlen].decode("utf-8")
            pos += nlen
            code, rank = struct.unpack_from("<BB", buf, pos)
            if code not in _DTYPES:
                raise FormatError(f"unknown dtype code {code}", pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            dtype = _DTYPES[code]
            n = int(np.prod(dims, dtype=np.int64))
            if pos + n * dtype.itemsize > len(buf):
                raise FormatError(f"truncated payload for tensor {name!r}", pos)
            out[name] = np.frombuffer(buf, dtype=dtype, count=n, offset=pos).reshape(dims).astype(dtype.newbyteorder("="))
            pos += n * dtype.itemsize
    except struct.error:
        raise FormatError("truncated checkpoint", pos) from None
    return out


def save_checkpoint(tensors, path):
    with open(path, "wb") as f:
        f.write(encode_checkpoint(tensors))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


def tensors_hash(tensors):
    h = hashlib.sha256()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(arr.tobytes())
    return h.hexdigest()
