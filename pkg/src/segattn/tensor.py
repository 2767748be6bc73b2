"""Dense tensor value type.

A Tensor wraps a C-contiguous numpy array of rank 1..4 in
batch-channel-height-width order for rank 4. Floating dtypes are "f32"
and "f64"; "u8" exists only as a storage dtype for label maps and is
rejected by every numeric op.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

NP_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "u8": np.dtype("u1")}
FLOAT_DTYPES = ("f32", "f64")
MAX_RANK = 4


class Tensor:
    """Rank 1..4 dense array with an explicit dtype tag."""

    __slots__ = ("data", "dtype")

    def __init__(self, data, dtype: str | None = None):
        if dtype is None:
            dtype = _infer_dtype(data)
        if dtype not in NP_DTYPES:
            raise ValueError(f"unsupported dtype {dtype!r}")
        arr = np.ascontiguousarray(data, dtype=NP_DTYPES[dtype])
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not 1 <= arr.ndim <= MAX_RANK:
            raise ShapeError(f"rank must be 1..{MAX_RANK}, got {arr.ndim}")
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"extents must be positive, got {arr.shape}")
        self.data = arr
        self.dtype = dtype

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got dims {self.dims}")
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), self.dtype)

    def astype(self, dtype: str) -> "Tensor":
        return Tensor(self.data, dtype)

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims}, dtype={self.dtype})"


def _infer_dtype(data) -> str:
    kind = np.asarray(data).dtype
    if kind == np.dtype("u1"):
        return "u8"
    if kind == np.dtype("<f4"):
        return "f32"
    return "f64"


def zeros(dims, dtype: str = "f64") -> Tensor:
    return Tensor(np.zeros(dims, dtype=NP_DTYPES[dtype]), dtype)


def full(dims, value: float, dtype: str = "f64") -> Tensor:
    return Tensor(np.full(dims, value, dtype=NP_DTYPES[dtype]), dtype)


def check_float(*tensors: Tensor) -> str:
    """Validate operands share one floating dtype and return it."""
    dt = tensors[0].dtype
    if dt not in FLOAT_DTYPES:
        raise ShapeError(f"numeric op requires f32/f64 operand, got {dt}")
    for t in tensors[1:]:
        if t.dtype != dt:
            raise ShapeError(f"dtype mismatch: {dt} vs {t.dtype}")
    return dt
