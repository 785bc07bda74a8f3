"""Writer for the binary vector interchange format.

Layout: magic "SPCV", version byte 0x01, little-endian u32 dim,
little-endian u64 record count, then per record a little-endian u16 id byte
length, the UTF-8 id, and dim little-endian f32 values. The consumer side
lives in the main pipeline; this writer matches it byte for byte.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .jobs import ExportError

MAGIC = b"SPCV"
VERSION = 0x01


def write_spcv(path: str | Path, ids: list[str], matrix: np.ndarray) -> int:
    if matrix.ndim != 2:
        raise ExportError("matrix must be 2-d (records x dim)")
    if len(ids) != matrix.shape[0]:
        raise ExportError(f"{len(ids)} ids for {matrix.shape[0]} rows")
    if matrix.shape[0] == 0 or matrix.shape[1] == 0:
        raise ExportError("nothing to write")
    if not np.isfinite(matrix).all():
        raise ExportError("non-finite values in matrix")
    if len(set(ids)) != len(ids):
        raise ExportError("duplicate ids")
    dim = matrix.shape[1]
    as_f32 = np.ascontiguousarray(matrix, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", dim))
        fh.write(struct.pack("<Q", len(ids)))
        for row_id, row in zip(ids, as_f32):
            raw = row_id.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ExportError(f"id too long: {row_id!r}")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(row.tobytes())
    return len(ids)
