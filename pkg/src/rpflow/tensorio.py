"""Little-endian named-tensor container used for checkpoints and noise files.

Layout::

    b"<MAGIC> <version>\\n"
    u32 tensor count
    per tensor: u32 name length, utf-8 name, u32 rank, rank x u64 dims, float64 payload
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import ParseError, VersionMismatch

ENCODER_MAGIC = "RPFENC"
FLOW_MAGIC = "RPFFLOW"
NOISE_MAGIC = "RPFNOISE"
VERSION = 1


def save_tensors(path, magic, tensors: dict, version=VERSION):
    with open(path, "wb") as f:
        f.write(f"{magic} {version}\n".encode("ascii"))
        f.write(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            arr = np.ascontiguousarray(np.asarray(value, dtype="<f8"))
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def load_tensors(path, magic) -> dict:
    with open(path, "rb") as f:
        data = f.read()
    nl = data.find(b"\n")
    if nl < 0:
        raise ParseError(f"{path}: missing header line", 1, 0)
    head = data[:nl].decode("ascii", errors="replace").split()
    if len(head) != 2 or head[0] != magic:
        raise ParseError(f"{path}: expected '{magic} <version>' header, got {' '.join(head)!r}", 1, 0)
    if head[1] != str(VERSION):
        raise VersionMismatch(f"{path}: {magic} version {head[1]} unsupported (expected {VERSION})")
    pos = nl + 1

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ParseError(f"{path}: truncated tensor container", None, pos)
        out = data[pos:pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims)
        tensors[name] = arr.astype(np.float64)
    if pos != len(data):
        raise ParseError(f"{path}: trailing bytes after last tensor", None, pos)
    return tensors
