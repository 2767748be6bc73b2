"""Central-difference verification of analytic gradients.

The checker perturbs tensor coordinates in place, re-evaluates a scalar
loss, and compares (f(x+h) - f(x-h)) / 2h against the tape gradient.
Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator so
zero-gradient coordinates do not divide by zero.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import EvaluationError
from .tape import Tape
from .tensor import Tensor

REL_ERR_FLOOR = 1e-8


def _relu_signature(tape: Tape) -> tuple:
    return tuple((rec.inputs[0].data > 0).tobytes()
                 for rec in tape.records if rec.name == "relu")


def grad_check(f: Callable[[Tape | None], Tensor], tensors: Sequence[Tensor],
               h: float = 1e-5, max_coords: int | None = None,
               rng: np.random.Generator | None = None,
               skip_kinks: bool = False, noise_gate: float = 0.0) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` evaluates the scalar loss from the current contents of
    ``tensors``; it receives a tape (or None for the finite-difference
    probes). Tensors must be f64. ``max_coords`` caps the number of
    coordinates probed per tensor (all by default); sampling is driven
    by ``rng`` and covers every tensor even when capped.

    With ``skip_kinks`` the probes track ReLU activation patterns and a
    coordinate whose [x-h, x+h] interval crosses a kink is skipped:
    central differences are only valid where the function is smooth.
    A nonzero ``noise_gate`` additionally skips coordinates whose
    analytic and numeric magnitudes both fall below
    gate*max(1, |loss|), i.e. below what a secant with step h can
    resolve against f64 evaluation roundoff.
    """
    for t in tensors:
        if t.dtype != "f64":
            raise ValueError(f"grad_check requires f64 tensors, got {t.dtype}")

    tape = Tape()
    loss = f(tape)
    if not np.isfinite(loss.data).all():
        raise EvaluationError("loss is not finite at the evaluation point")
    gate = noise_gate * max(1.0, abs(loss.item()))
    analytic = tape.backward(loss, tensors)

    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            if skip_kinks:
                probe_p, probe_m = Tape(), Tape()
                flat[i] = orig + h
                fp = f(probe_p).item()
                flat[i] = orig - h
                fm = f(probe_m).item()
                flat[i] = orig
                if _relu_signature(probe_p) != _relu_signature(probe_m):
                    continue
            else:
                flat[i] = orig + h
                fp = f(None).item()
                flat[i] = orig - h
                fm = f(None).item()
                flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise EvaluationError(f"non-finite loss while probing coordinate {i}")
            numeric = (fp - fm) / (2.0 * h)
            if gate and max(abs(gflat[i]), abs(numeric)) < gate:
                continue
            denom = max(abs(gflat[i]), abs(numeric), REL_ERR_FLOOR)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
