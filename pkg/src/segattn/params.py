"""Parameter initialization, traversal, and directory serialization.

Weights are zero-mean normal with fan-in-scaled standard deviation.
Any dataclass tree of Tensors / BatchNormStates can be walked for SGD
updates and saved as a directory of HMAT files plus a manifest listing
name, file, and dims per entry.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from . import hmat
from .errors import ShapeError
from .ops import BatchNormState, ConvBlock, new_batchnorm_state
from .tensor import NP_DTYPES, Tensor


def conv_weight(rng: np.random.Generator, cout: int, cin: int,
                kh: int, kw: int, dtype: str = "f64") -> Tensor:
    std = 1.0 / np.sqrt(cin * kh * kw)
    return Tensor(rng.normal(0.0, std, (cout, cin, kh, kw)).astype(NP_DTYPES[dtype]), dtype)


def dense_weight(rng: np.random.Generator, out_dim: int, in_dim: int,
                 dtype: str = "f64") -> Tensor:
    std = 1.0 / np.sqrt(in_dim)
    return Tensor(rng.normal(0.0, std, (out_dim, in_dim)).astype(NP_DTYPES[dtype]), dtype)


def conv_block_params(rng: np.random.Generator, cin: int, cout: int, k: int,
                      stride: int = 1, pad: int = 0, relu: bool = True,
                      dtype: str = "f64") -> ConvBlock:
    return ConvBlock(weight=conv_weight(rng, cout, cin, k, k, dtype),
                     bn=new_batchnorm_state(cout, dtype),
                     stride=stride, pad=pad, relu=relu)


def named_parameters(obj, prefix: str = "") -> list[tuple[str, Tensor]]:
    """All learnable tensors under ``obj`` in a stable field order."""
    found: list[tuple[str, Tensor]] = []
    _walk(obj, prefix, found, buffers=None)
    return found


def named_state(obj, prefix: str = "") -> tuple[list[tuple[str, Tensor]],
                                                list[tuple[str, np.ndarray]]]:
    """Learnable tensors plus non-learnable buffers (BN running stats)."""
    found: list[tuple[str, Tensor]] = []
    buffers: list[tuple[str, np.ndarray]] = []
    _walk(obj, prefix, found, buffers)
    return found, buffers


def _walk(obj, prefix, found, buffers):
    if isinstance(obj, Tensor):
        found.append((prefix, obj))
    elif isinstance(obj, BatchNormState):
        found.append((f"{prefix}.gamma", obj.gamma))
        found.append((f"{prefix}.beta", obj.beta))
        if buffers is not None:
            buffers.append((f"{prefix}.running_mean", obj.running_mean))
            buffers.append((f"{prefix}.running_var", obj.running_var))
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            child = getattr(obj, f.name)
            if isinstance(child, (Tensor, BatchNormState, list, tuple)) or dataclasses.is_dataclass(child):
                _walk(child, f"{prefix}.{f.name}" if prefix else f.name, found, buffers)
    elif isinstance(obj, (list, tuple)):
        for i, child in enumerate(obj):
            _walk(child, f"{prefix}[{i}]", found, buffers)


def _filename(name: str) -> str:
    return name.replace(".", "__").replace("[", "_").replace("]", "") + ".hmat"


def save_params(directory: str | Path, obj, manifest_name: str = "manifest.txt") -> None:
    """Serialize all tensors and buffers under ``obj`` into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors, buffers = named_state(obj)
    lines = []
    for name, t in tensors:
        fname = _filename(name)
        hmat.save_tensor(directory / fname, t)
        lines.append(f"{name}\t{fname}\t{'x'.join(map(str, t.dims))}")
    for name, arr in buffers:
        fname = _filename(name)
        hmat.save_array(directory / fname, arr)
        lines.append(f"{name}\t{fname}\t{'x'.join(map(str, arr.shape))}")
    (directory / manifest_name).write_text("\n".join(lines) + "\n")


def load_params(directory: str | Path, obj, manifest_name: str = "manifest.txt") -> None:
    """Load a parameter directory into an existing structure, in place."""
    directory = Path(directory)
    entries = {}
    for line in (directory / manifest_name).read_text().splitlines():
        if not line.strip():
            continue
        name, fname, _ = line.split("\t")
        entries[name] = fname
    tensors, buffers = named_state(obj)
    for name, t in tensors:
        if name not in entries:
            raise ShapeError(f"manifest is missing parameter {name!r}")
        loaded = hmat.load_array(directory / entries[name])
        if loaded.shape != t.data.shape:
            raise ShapeError(f"parameter {name!r}: file dims {loaded.shape} "
                             f"!= expected {t.data.shape}")
        t.data[...] = loaded
    for name, arr in buffers:
        if name not in entries:
            raise ShapeError(f"manifest is missing buffer {name!r}")
        loaded = hmat.load_array(directory / entries[name])
        if loaded.shape != arr.shape:
            raise ShapeError(f"buffer {name!r}: file dims {loaded.shape} != expected {arr.shape}")
        arr[...] = loaded
