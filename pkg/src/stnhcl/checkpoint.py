"""Versioned little-endian binary checkpoints.

Layout: the 4-byte magic ``STNH``, a u32 format version, a u32 entry
count, then per entry a u32 name length, UTF-8 name bytes, u32 rank,
one u32 extent per axis, and the row-major float32 payload.  Entries
keep their insertion order, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError
from .tensor import Tensor

MAGIC = b"STNH"
VERSION = 1
_U32 = struct.Struct("<I")


def save_checkpoint(path, arrays: Mapping[str, "np.ndarray | Tensor"]) -> None:
    """Write named arrays as float32; parents of ``path`` must exist."""
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(arrays))]
    for name, value in arrays.items():
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        payload = np.ascontiguousarray(data, dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(payload.ndim))
        for extent in payload.shape:
            chunks.append(_U32.pack(extent))
        chunks.append(payload.tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, label: str):
        self.blob = blob
        self.pos = 0
        self.label = label

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.label}: truncated (wanted {n} bytes at offset {self.pos})")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Named float32 arrays, in file order."""
    reader = _Reader(Path(path).read_bytes(), str(path))
    if reader.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic, not a checkpoint")
    version = reader.u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    count = reader.u32()
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = reader.u32()
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{path}: undecodable entry name") from None
        rank = reader.u32()
        if rank > 8:
            raise FormatError(f"{path}: implausible rank {rank} for {name!r}")
        shape = tuple(reader.u32() for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = reader.take(size * 4)
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    if reader.pos != len(reader.blob):
        raise FormatError(f"{path}: {len(reader.blob) - reader.pos} trailing bytes")
    return arrays


def assign_parameters(params: Mapping[str, Tensor], arrays: Mapping[str, np.ndarray], context: str = "checkpoint") -> None:
    """Load arrays into live tensors by name; names and shapes must match exactly."""
    missing = params.keys() - arrays.keys()
    extra = arrays.keys() - params.keys()
    if missing or extra:
        raise FormatError(
            f"{context}: parameter names do not match "
            f"(missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]})"
        )
    for name, tensor in params.items():
        arr = arrays[name]
        if arr.shape != tensor.data.shape:
            raise FormatError(f"{context}: {name} has shape {arr.shape}, expected {tensor.data.shape}")
        tensor.data = arr.astype(tensor.data.dtype)
