"""Reverse-mode gradients over a recorded op tape.

Every differentiable op appends one record holding its inputs, its
output, and a vector-Jacobian closure. backward() walks the records in
exact reverse execution order and accumulates gradients keyed by tensor
identity, so an op's rule is testable in isolation by recording just
that op.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

# vjp: gradient w.r.t. output -> one gradient array (or None) per input
Vjp = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class OpRecord:
    __slots__ = ("name", "inputs", "output", "vjp")

    def __init__(self, name: str, inputs: tuple[Tensor, ...], output: Tensor, vjp: Vjp):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape:
    """Ordered record of executed ops with saved state for gradients."""

    def __init__(self):
        self.records: list[OpRecord] = []

    def record(self, name: str, inputs: tuple[Tensor, ...], output: Tensor, vjp: Vjp) -> None:
        self.records.append(OpRecord(name, inputs, output, vjp))

    def op_names(self) -> list[str]:
        return [r.name for r in self.records]

    def clear(self) -> None:
        self.records.clear()

    def backward(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of a scalar ``loss`` w.r.t. each tensor in ``wrt``.

        Tensors that never influenced the loss get zero gradients.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got dims {loss.dims}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            gout = grads.get(id(rec.output))
            if gout is None:
                continue
            gins = rec.vjp(gout)
            if len(gins) != len(rec.inputs):
                raise RuntimeError(f"op {rec.name}: vjp returned {len(gins)} grads "
                                   f"for {len(rec.inputs)} inputs")
            for tin, gin in zip(rec.inputs, gins):
                if gin is None:
                    continue
                if gin.shape != tin.data.shape:
                    raise RuntimeError(f"op {rec.name}: grad shape {gin.shape} "
                                       f"!= input shape {tin.data.shape}")
                acc = grads.get(id(tin))
                grads[id(tin)] = gin if acc is None else acc + gin
        return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]
