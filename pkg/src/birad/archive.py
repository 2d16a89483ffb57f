"""Named-tensor checkpoint archive.

Binary layout (all integers little-endian unsigned 32-bit):

    magic "BIRA" | version | entry count
    per entry: name length | UTF-8 name | dtype code | rank | dims... | raw data

Dtype code 0 is 32-bit float, stored little-endian. Entry order is
preserved on load, so save -> load -> save round-trips byte-identically.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"BIRA"
VERSION = 1
DTYPE_F32 = 0


class ArchiveError(ValueError):
    pass


def save_archive(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 arrays to ``path`` in entry order."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(tensors))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<II", DTYPE_F32, arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_archive(path: str | Path) -> dict[str, np.ndarray]:
    """Read an archive back into an ordered name -> float32 array dict."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ArchiveError(f"bad magic in {path!r}: {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ArchiveError(f"unsupported archive version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        dtype_code, rank = struct.unpack_from("<II", data, offset)
        offset += 8
        if dtype_code != DTYPE_F32:
            raise ArchiveError(f"unknown dtype code {dtype_code} for {name!r}")
        shape = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        out[name] = arr.reshape(shape).copy()
    return out


def archive_hash(path: str | Path) -> str:
    """SHA-256 of the archive file, for frozen-parameter checks."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
