"""HMAT binary tensor files.

Layout, all integers little-endian:
    magic  b"HMAT"
    u32    version (1)
    u32    dtype code: 0 = f32, 1 = f64, 2 = u8
    u32    rank
    u64    extent, repeated rank times
    payload: row-major values
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import HmatFormatError
from .tensor import MAX_RANK, Tensor

MAGIC = b"HMAT"
VERSION = 1
DTYPE_CODES = {"f32": 0, "f64": 1, "u8": 2}
CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
CODE_NAMES = {0: "f32", 1: "f64", 2: "u8"}


def save_array(path: str | Path, arr: np.ndarray) -> None:
    """Write a numpy array of dtype f32/f64/u8 as an HMAT file."""
    name = {np.dtype("<f4"): "f32", np.dtype("<f8"): "f64", np.dtype("u1"): "u8"}.get(arr.dtype)
    if name is None:
        raise ValueError(f"unsupported array dtype {arr.dtype}")
    if not 1 <= arr.ndim <= MAX_RANK:
        raise ValueError(f"rank must be 1..{MAX_RANK}, got {arr.ndim}")
    header = MAGIC + struct.pack("<III", VERSION, DTYPE_CODES[name], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_array(path: str | Path) -> np.ndarray:
    """Read an HMAT file back into a little-endian numpy array."""
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise HmatFormatError("bad magic, expected b'HMAT'", 0)
    if len(blob) < 16:
        raise HmatFormatError("truncated header", len(blob))
    version, code, rank = struct.unpack_from("<III", blob, 4)
    if version != VERSION:
        raise HmatFormatError(f"unsupported version {version}", 4)
    if code not in CODE_DTYPES:
        raise HmatFormatError(f"unknown dtype code {code}", 8)
    if not 1 <= rank <= MAX_RANK:
        raise HmatFormatError(f"rank {rank} out of range 1..{MAX_RANK}", 12)
    extents_end = 16 + 8 * rank
    if len(blob) < extents_end:
        raise HmatFormatError("truncated extents", len(blob))
    dims = struct.unpack_from(f"<{rank}Q", blob, 16)
    if any(d == 0 for d in dims):
        raise HmatFormatError(f"zero extent in {dims}", 16)
    dtype = CODE_DTYPES[code]
    count = int(np.prod(dims))
    need = extents_end + count * dtype.itemsize
    if len(blob) != need:
        raise HmatFormatError(
            f"payload is {len(blob) - extents_end} bytes, expected {count * dtype.itemsize}",
            min(len(blob), need))
    arr = np.frombuffer(blob, dtype=dtype, count=count, offset=extents_end)
    return arr.reshape(dims).copy()


def save_tensor(path: str | Path, t: Tensor) -> None:
    save_array(path, t.data)


def load_tensor(path: str | Path) -> Tensor:
    arr = load_array(path)
    name = CODE_NAMES[{np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("u1"): 2}[arr.dtype]]
    return Tensor(arr, name)
