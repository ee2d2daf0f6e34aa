"""Image file formats: binary PGM and the raw ``CRRIMG`` float containers.

``CRRIMG01`` holds a real image: 8-byte magic, little-endian ``u32`` height
and width, then ``height * width`` little-endian float32 values (row-major).
``CRRIMG02`` uses the same header followed by interleaved (re, im) float32
pairs, for k-space data.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

RAW_REAL = b"CRRIMG01"
RAW_COMPLEX = b"CRRIMG02"
_HEADER = struct.Struct("<8sII")


def write_raw(path, image):
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("raw images are 2D")
    h, w = image.shape
    if np.iscomplexobj(image):
        payload = np.empty((h, w, 2), dtype="<f4")
        payload[..., 0] = image.real
        payload[..., 1] = image.imag
        magic = RAW_COMPLEX
    else:
        payload = image.astype("<f4")
        magic = RAW_REAL
    Path(path).write_bytes(_HEADER.pack(magic, h, w) + payload.tobytes())


def read_raw(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    magic, h, w = _HEADER.unpack_from(data)
    if magic not in (RAW_REAL, RAW_COMPLEX):
        raise FormatError(f"bad magic {magic!r}")
    n = h * w * (2 if magic == RAW_COMPLEX else 1)
    body = data[_HEADER.size:]
    if len(body) != 4 * n:
        raise FormatError(f"expected {4 * n} payload bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<f4").astype(np.float64)
    if magic == RAW_COMPLEX:
        values = values.reshape(h, w, 2)
        return values[..., 0] + 1j * values[..., 1]
    return values.reshape(h, w)


def _pgm_tokens(data, count):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(int(data[start:pos]))
    return tokens, pos + 1


def read_pgm(path):
    """Read a binary (P5) or ASCII (P2) greymap, scaled to [0, 1]."""
    data = Path(path).read_bytes()
    kind = data[:2]
    if kind not in (b"P5", b"P2"):
        raise FormatError(f"not a PGM file: {kind!r}")
    (w, h, maxval), pos = _pgm_tokens(data, 3)
    if not 0 < maxval < 65536:
        raise FormatError(f"invalid maxval {maxval}")
    if kind == b"P2":
        values = np.array(data[pos:].split()[:w * h], dtype=np.float64)
    else:
        dtype = ">u2" if maxval > 255 else "u1"
        nbytes = w * h * np.dtype(dtype).itemsize
        if len(data) - pos < nbytes:
            raise FormatError("truncated PGM payload")
        values = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).astype(np.float64)
    if values.size != w * h:
        raise FormatError("truncated PGM payload")
    return values.reshape(h, w) / maxval


def write_pgm(path, image, bits=8):
    """Write a [0, 1] image as binary PGM; values are clipped."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    image = np.asarray(image, dtype=np.float64)
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(image, 0.0, 1.0) * maxval)
    payload = q.astype("u1" if bits == 8 else ">u2").tobytes()
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + payload)


def read_image(path):
    """Dispatch on the file's magic bytes."""
    head = Path(path).read_bytes()[:8]
    if head in (RAW_REAL, RAW_COMPLEX):
        return read_raw(path)
    if head[:2] in (b"P5", b"P2"):
        return read_pgm(path)
    raise FormatError(f"unrecognised image format in {path}")


def write_image(path, image):
    if str(path).lower().endswith(".pgm"):
        write_pgm(path, image, bits=16)
    else:
        write_raw(path, image)
