"""FEB1 writer (bit-exact to the consumer's format).

Layout, little-endian: magic ``FEB1`` | version u32=1 | model_id_len u32 |
model_id UTF-8 | dim u32 | frame_count u32 | hop_us u32 | offset_us u32 |
frame_count*dim float32 row-major.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FEB1"
VERSION = 1


def encode_feb(model_id: str, matrix: np.ndarray, hop_us: int, offset_us: int) -> bytes:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite values")
    mid = model_id.encode("utf-8")
    header = (
        MAGIC
        + struct.pack("<II", VERSION, len(mid))
        + mid
        + struct.pack("<IIII", m.shape[1], m.shape[0], hop_us, offset_us)
    )
    return header + m.tobytes()


def write_feb_atomic(path: str | Path, payload: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(payload)
    os.replace(tmp, path)
