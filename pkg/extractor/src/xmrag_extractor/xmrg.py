"""Writer/reader for the engine's XMRG feature file format.

Layout: magic "XMRG", format version u32 LE (=1), rows u32 LE, cols u32 LE,
then rows*cols float32 LE row-major. This module is the extractor's own
implementation of the shared on-disk contract; it deliberately does not
import the retrieval engine.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"XMRG"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


class FormatError(ValueError):
    pass


def write_matrix(path: str | Path, m: np.ndarray) -> None:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise FormatError(f"matrix must be 2-D and non-empty, got {m.shape}")
    if not np.isfinite(m).all():
        raise FormatError("matrix contains non-finite values")
    rows, cols = m.shape
    payload = np.ascontiguousarray(m, dtype="<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(MAGIC, VERSION, rows, cols) + payload)


def read_matrix(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: shorter than header")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC or version != VERSION:
        raise FormatError(f"{path}: bad magic or version")
    if rows < 1 or cols < 1 or len(data) != _HEADER.size + 4 * rows * cols:
        raise FormatError(f"{path}: header/size mismatch")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).copy()
