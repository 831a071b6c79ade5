"""SWNF: a small checksummed container for named float32 tensors.

Layout (all integers u32 little-endian)::

    b"SWNF" | version | count |
    count x ( name_len | name utf-8 | rank | dims[rank] | float32 LE data ) |
    crc32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SWNF"
VERSION = 1

_U32 = struct.Struct("<I")


class WeightFormatError(ValueError):
    pass


@dataclass
class WeightStore:
    """Ordered name -> float32 array map."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION

    def __len__(self) -> int:
        return len(self.tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    @classmethod
    def from_params(cls, params) -> WeightStore:
        return cls({k: np.array(v.data, dtype=np.float32) for k, v in params.items()})


def encode_weights(store: WeightStore) -> bytes:
    parts = [MAGIC, _U32.pack(store.version), _U32.pack(len(store.tensors))]
    for name, arr in store.tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(_U32.pack(arr.ndim))
        parts.extend(_U32.pack(d) for d in arr.shape)
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body))


def decode_weights(blob: bytes) -> WeightStore:
    if len(blob) < 16:
        raise WeightFormatError(f"file too short ({len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise WeightFormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    body, (crc,) = blob[:-4], _U32.unpack(blob[-4:])
    if zlib.crc32(body) != crc:
        raise WeightFormatError("CRC mismatch: file is corrupt or truncated")
    (version,) = _U32.unpack_from(body, 4)
    if version != VERSION:
        raise WeightFormatError(f"unsupported version {version}")
    (count,) = _U32.unpack_from(body, 8)
    pos = 12

    def take(nbytes: int) -> bytes:
        nonlocal pos
        if pos + nbytes > len(body):
            raise WeightFormatError(f"unexpected end of data at byte {pos}")
        chunk = body[pos:pos + nbytes]
        pos += nbytes
        return chunk

    def u32() -> int:
        return _U32.unpack(take(4))[0]

    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            name = take(u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError(f"tensor name is not UTF-8 at byte {pos}") from exc
        if name in tensors:
            raise WeightFormatError(f"duplicate tensor name {name!r}")
        dims = tuple(u32() for _ in range(u32()))
        n = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
    if pos != len(body):
        raise WeightFormatError(f"{len(body) - pos} trailing bytes after {count} tensors")
    return WeightStore(tensors, version)


def save_weights(store: WeightStore, path) -> None:
    Path(path).write_bytes(encode_weights(store))


def load_weights(path) -> WeightStore:
    return decode_weights(Path(path).read_bytes())
