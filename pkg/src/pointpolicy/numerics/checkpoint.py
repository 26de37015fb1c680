"""Binary parameter checkpoint format.

Layout: magic ``FP3W``, format version (u32), then one record per array:
name length (u16), utf-8 name, rank (u8), dims (u32 each), payload as
little-endian float32. All integers little-endian. Records are written in
sorted-name order so identical parameter sets produce identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FP3W"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated, or version-incompatible weight file."""


def save_weights(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f4")
        encoded = name.encode("utf-8")
        buf += struct.pack("<H", len(encoded))
        buf += encoded
        buf += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<I", dim)
        buf += arr.tobytes(order="C")
    Path(path).write_bytes(bytes(buf))


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a weight file (bad magic at offset 0)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version} (reader supports {VERSION})")
    out: dict[str, np.ndarray] = {}
    offset = 8
    total = len(raw)

    def need(nbytes: int) -> None:
        if offset + nbytes > total:
            raise CheckpointError(f"{path}: truncated record at byte offset {offset}")

    while offset < total:
        need(2)
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        need(name_len)
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        need(1)
        rank = raw[offset]
        offset += 1
        need(4 * rank)
        dims = struct.unpack_from(f"<{rank}I", raw, offset) if rank else ()
        offset += 4 * rank
        count = int(np.prod(dims)) if dims else 1
        need(4 * count)
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(dims)
        offset += 4 * count
        out[name] = arr.astype(np.float32)
    return out
