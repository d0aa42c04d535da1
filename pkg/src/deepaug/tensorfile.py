"""Named-tensor binary container used for checkpoints and dataset exports.

Layout (all integers little-endian)::

    b"DAUG"                     magic
    u32 version                 currently 1
    u32 tensor count
    per tensor:
        u16 name length, UTF-8 name
        u8  rank, rank x u32 dims
        product(dims) x f32 payload
"""
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, TruncationError, VersionError

MAGIC = b"DAUG"
VERSION = 1


def encode_tensors(tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF or any(d < 1 for d in arr.shape):
            raise FormatError(f"tensor {name!r}: dims must be positive, got {arr.shape}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_tensors(buf: bytes) -> dict:
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise TruncationError(
                f"truncated while reading {what} at byte offset {pos}: "
                f"need {n} bytes, {len(buf) - pos} available"
            )
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    magic = take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise VersionError(f"unsupported format version {version} (supported: {VERSION})")
    out = {}
    for i in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"name length of tensor {i}"))
        try:
            name = take(nlen, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"tensor {i}: name is not valid UTF-8") from e
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}")
        (rank,) = struct.unpack("<B", take(1, f"rank of {name!r}"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name!r}"))
        if any(d == 0 for d in dims):
            raise FormatError(f"tensor {name!r}: zero-length dimension")
        n = int(np.prod(dims, dtype=np.int64))
        payload = take(4 * n, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last tensor")
    return out


def write_tensors(path, tensors: dict) -> None:
    Path(path).write_bytes(encode_tensors(tensors))


def read_tensors(path) -> dict:
    return decode_tensors(Path(path).read_bytes())
