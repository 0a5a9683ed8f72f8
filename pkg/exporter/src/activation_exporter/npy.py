"""Minimal NPY v1.0 writer for the interchange format.

Deliberately self-contained: the scoring side has its own reader/writer,
and cross-checking the two byte-for-byte is part of the format contract.
Only little-endian C-order <f4/<f8/<i8 are ever emitted. Writes go to a
temp file in the target directory and are renamed into place.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

_MAGIC = b"\x93NUMPY"
_DESCRS = {np.dtype(np.float32): "<f4", np.dtype(np.float64): "<f8", np.dtype(np.int64): "<i8"}
_ALIGN = 64


def npy_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DESCRS:
        raise ValueError(f"unsupported export dtype {arr.dtype}")
    header = f"{{'descr': '{_DESCRS[arr.dtype]}', 'fortran_order': False, 'shape': {arr.shape!r}, }}"
    pad = (-(len(_MAGIC) + 4 + len(header) + 1)) % _ALIGN
    header_bytes = (header + " " * pad + "\n").encode("latin1")
    return _MAGIC + struct.pack("<BBH", 1, 0, len(header_bytes)) + header_bytes + arr.tobytes()


def write_npy(arr: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(npy_bytes(arr))
    os.replace(tmp, path)
