"""Portable float map (color ``PF``) reading and writing.

In memory images are top-row-first ``(H, W, 3)`` float32 arrays; on disk PFM
stores rows bottom-to-top. Files are always written little-endian.
"""

import numpy as np

from .errors import FormatError, UnsupportedFormatError


def _read_token_line(buf, pos):
    end = buf.find(b"\n", pos)
    if end < 0:
        raise FormatError("unterminated header line", pos)
    return buf[pos:end].decode("ascii", errors="replace").strip(), end + 1


def decode_pfm(buf):
    pos = 0
    magic, pos = _read_token_line(buf, pos)
    if magic == "Pf":
        raise UnsupportedFormatError("grayscale PFM ('Pf') is not supported", 0)
    if magic != "PF":
        raise FormatError(f"bad magic {magic!r}, expected 'PF'", 0)
    dims_at = pos
    dims, pos = _read_token_line(buf, pos)
    parts = dims.split()
    try:
        width, height = (int(p) for p in parts)
    except ValueError:
        raise FormatError(f"bad dimensions line {dims!r}", dims_at) from None
    if width < 1 or height < 1:
        raise FormatError(f"non-positive dimensions {width}x{height}", dims_at)
    scale_at = pos
    scale_line, pos = _read_token_line(buf, pos)
    try:
        scale = float(scale_line)
    except ValueError:
        raise FormatError(f"bad scale line {scale_line!r}", scale_at) from None
    if scale == 0:
        raise FormatError("scale must be nonzero", scale_at)
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = width * height * 3
    need = count * 4
    if len(buf) - pos < need:
        raise FormatError(
            f"truncated payload: need {need} bytes, have {len(buf) - pos}", len(buf)
        )
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    img = data.reshape(height, width, 3)[::-1].astype(np.float32)
    return img


def read_pfm(path):
    with open(path, "rb") as f:
        return decode_pfm(f.read())


def encode_pfm(img):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise UnsupportedFormatError(f"only 3-channel images can be written, got {img.shape}")
    height, width = img.shape[:2]
    header = f"PF\n{width} {height}\n-1.0\n".encode("ascii")
    payload = np.ascontiguousarray(img[::-1], dtype="<f4").tobytes()
    return header + payload


def write_pfm(img, path):
    with open(path, "wb") as f:
        f.write(encode_pfm(img))
