"""Binary tensor archive used for model checkpoints.

Layout (all little-endian):

    magic   4 bytes  "DAVA"
    version u32      currently 1
    precision u8     4 = float32, 8 = float64
    count   u32      number of entries
    entry   name (u32 byte length + UTF-8 bytes), rank u32,
            extents u64[rank], raw float payload (product(extents) values
            at the file's precision)

Entries whose name starts with ``meta:`` carry UTF-8 JSON encoded one byte
per float value (rank 1, extents = [byte count]); everything else is a
tensor payload.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"DAVA"
VERSION = 1
META_PREFIX = "meta:"

_PRECISION = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def save_archive(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float arrays (plus optional JSON metadata blocks) to disk."""
    arrays = dict(tensors)
    if not arrays and not meta:
        raise FormatError("refusing to write an empty archive")
    dtypes = {np.dtype(a.dtype).itemsize for a in arrays.values()}
    if len(dtypes) > 1:
        raise FormatError(f"mixed precisions in one archive: {sorted(dtypes)}")
    itemsize = dtypes.pop() if dtypes else 4
    if itemsize not in _PRECISION:
        raise FormatError(f"unsupported itemsize {itemsize}")
    dtype = _PRECISION[itemsize]

    entries: list[tuple[str, np.ndarray]] = []
    for name, arr in arrays.items():
        if name.startswith(META_PREFIX):
            raise FormatError(f"tensor name may not start with '{META_PREFIX}': {name}")
        entries.append((name, arr.astype(dtype, order="C", copy=False)))
    for key, value in (meta or {}).items():
        blob = json.dumps(value, sort_keys=True).encode("utf-8")
        entries.append((META_PREFIX + key, np.frombuffer(blob, dtype=np.uint8).astype(dtype)))

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IBI", VERSION, itemsize, len(entries)))
        for name, arr in entries:
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read an archive back as (tensors, metadata)."""
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    if len(raw) < 13:
        raise FormatError(f"{path}: truncated header")
    if bytes(view[:4]) != MAGIC:
        raise FormatError(f"{path}: bad magic {bytes(view[:4])!r}")
    version, itemsize, count = struct.unpack_from("<IBI", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if itemsize not in _PRECISION:
        raise FormatError(f"{path}: unsupported precision tag {itemsize}")
    dtype = _PRECISION[itemsize]

    offset = 13
    tensors: dict[str, np.ndarray] = {}
    meta: dict = {}
    for _ in range(count):
        if offset + 4 > len(raw):
            raise FormatError(f"{path}: truncated entry header")
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if offset + name_len > len(raw):
            raise FormatError(f"{path}: truncated entry name")
        name = bytes(view[offset : offset + name_len]).decode("utf-8")
        offset += name_len
        if offset + 4 > len(raw):
            raise FormatError(f"{path}: truncated rank for '{name}'")
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if offset + 8 * rank > len(raw):
            raise FormatError(f"{path}: truncated extents for '{name}'")
        extents = struct.unpack_from(f"<{rank}Q", raw, offset)
        offset += 8 * rank
        n_values = 1
        for e in extents:
            n_values *= e
        nbytes = n_values * itemsize
        if offset + nbytes > len(raw):
            raise FormatError(f"{path}: truncated payload for '{name}'")
        arr = np.frombuffer(raw, dtype=dtype, count=n_values, offset=offset).reshape(extents)
        offset += nbytes
        if name.startswith(META_PREFIX):
            blob = arr.astype(np.uint8).tobytes()
            meta[name[len(META_PREFIX) :]] = json.loads(blob.decode("utf-8"))
        else:
            tensors[name] = arr.copy()
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after last entry")
    return tensors, meta
