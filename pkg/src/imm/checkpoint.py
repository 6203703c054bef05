"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"IMM1" | u32 version | u32 header_len | header (UTF-8 INI config)
    u64 step | u64 seed | u32 n_tensors
    per tensor: u32 name_len | name (UTF-8) | u8 dtype (0=f32, 1=f64)
                | u32 rank | u64 dims[rank] | raw data

Tensors are written in sorted name order so equal states give equal bytes.
"""

from __future__ import annotations

import dataclasses
import os
import struct

import numpy as np

MAGIC = b"IMM1"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


@dataclasses.dataclass
class Checkpoint:
    config_text: str
    step: int
    seed: int
    tensors: dict  # name -> ndarray

    def group(self, prefix: str) -> dict:
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def to_bytes(ck: Checkpoint) -> bytes:
    header = ck.config_text.encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    parts.append(struct.pack("<QQI", ck.step, ck.seed % 2**64, len(ck.tensors)))
    for name in sorted(ck.tensors):
        arr = np.asarray(ck.tensors[name])
        if arr.dtype not in CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        code = CODES[arr.dtype]
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BI", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf: bytes) -> Checkpoint:
    rd = _Reader(buf)
    if rd.take(4) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version, hlen = rd.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_text = rd.take(hlen).decode("utf-8")
    step, seed, count = rd.unpack("<QQI")
    tensors = {}
    for _ in range(count):
        (nlen,) = rd.unpack("<I")
        name = rd.take(nlen).decode("utf-8")
        code, rank = rd.unpack("<BI")
        if code not in DTYPES:
            raise CheckpointError(f"unknown dtype code {code}")
        dims = rd.unpack(f"<{rank}Q")
        dt = DTYPES[code]
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(rd.take(n * dt.itemsize), dtype=dt).reshape(dims)
        tensors[name] = arr.astype(dt.newbyteorder("="))
    if rd.pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint")
    return Checkpoint(config_text, step, seed, tensors)


def save(path, ck: Checkpoint):
    data = to_bytes(ck)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
