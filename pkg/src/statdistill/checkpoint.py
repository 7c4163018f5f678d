"""Binary checkpoint container for named float tensors.

Layout, all integers little-endian uint32 and values little-endian
float32:

    magic "SDT1"
    repeat per entry:
        name_length, name (UTF-8), rank, dims[rank], values (row-major)

Entries keep their insertion order, so writing the same mapping twice
produces identical bytes. float32 arrays round-trip bitwise; wider inputs
are narrowed to float32 on save.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"SDT1"
_U32 = struct.Struct("<I")


def save_tensors(path, named: dict) -> None:
    """Write an ordered mapping of names to float arrays."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, value in named.items():
            raw = name.encode("utf-8")
            # asarray keeps 0-d shapes; tobytes() below handles layout itself
            arr = np.asarray(value).astype("<f4", copy=False)
            fh.write(_U32.pack(len(raw)))
            fh.write(raw)
            fh.write(_U32.pack(arr.ndim))
            for dim in arr.shape:
                fh.write(_U32.pack(dim))
            fh.write(arr.tobytes())


def load_tensors(path) -> dict:
    """Read a checkpoint back into an ordered name -> float32 array mapping."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(
            f"unknown checkpoint magic {blob[:4]!r}, expected {MAGIC!r}", offset=0
        )
    out: dict = {}
    pos = 4
    total = len(blob)

    def take(nbytes: int, what: str) -> bytes:
        nonlocal pos
        if pos + nbytes > total:
            raise FormatError(f"truncated checkpoint while reading {what}", offset=pos)
        piece = blob[pos:pos + nbytes]
        pos += nbytes
        return piece

    while pos < total:
        (name_len,) = _U32.unpack(take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = _U32.unpack(take(4, "rank"))
        shape = tuple(_U32.unpack(take(4, "dimension"))[0] for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        values = np.frombuffer(take(4 * count, f"values of {name!r}"), dtype="<f4")
        if name in out:
            raise FormatError(f"duplicate entry {name!r} in checkpoint", offset=pos)
        out[name] = values.reshape(shape).astype(np.float32)
    return out
