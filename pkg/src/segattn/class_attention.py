"""Class-augmented attention with an embedded class-channel gate.

The block correlates reduced feature channels with per-pixel class
probabilities to form a channel-by-category affinity map, optionally
recalibrates that map with a squeeze-excite style gate over the class
axis, and reconstructs features as affinity-weighted sums of the class
probability planes behind a residual transform pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ShapeError
from .ops import ConvBlock
from .params import conv_block_params, conv_weight, dense_weight
from .tape import Tape
from .tensor import Tensor, check_float, zeros


@dataclass
class ClassAttentionMap:
    """Per-pixel class logits [B,N,H,W]; softmax over axis 1 gives confidences."""
    logits: Tensor
    num_classes: int

    def __post_init__(self):
        if self.logits.rank != 4 or self.logits.dims[1] != self.num_classes:
            raise ShapeError(f"class logits {self.logits.dims} do not carry "
                             f"{self.num_classes} classes on axis 1")
        if self.num_classes < 2:
            raise ShapeError("need at least 2 classes")


@dataclass
class ClassAffinityMap:
    """Channel-to-category scores S [B,C',N] and their row-softmax A."""
    scores: Tensor
    affinity: Tensor


@dataclass
class CaaParams:
    """Transforms of the class-augmented attention block.

    reduce maps C -> C' for the affinity product, class_head emits the
    supervised class logits, delta lifts the C'-channel context back to
    C for the residual add, rho post-transforms the sum.
    """
    reduce: ConvBlock
    class_head_w: Tensor
    class_head_b: Tensor
    delta: ConvBlock
    rho: ConvBlock

    @property
    def channels(self) -> int:
        return self.reduce.weight.dims[1]

    @property
    def reduced(self) -> int:
        return self.reduce.weight.dims[0]

    @property
    def num_classes(self) -> int:
        return self.class_head_w.dims[0]


@dataclass
class CcaParams:
    """Class-channel gate: two dense maps around a ReLU, plus the mix scalar.

    w1 ascends N -> alpha*N, w2 squeezes back; gamma starts at zero so
    the recalibration is inert at initialization.
    """
    w1: Tensor
    w2: Tensor
    ratio: int
    gamma: Tensor

    def __post_init__(self):
        n = self.w2.dims[0]
        if self.w1.dims != (self.ratio * n, n) or self.w2.dims != (n, self.ratio * n):
            raise ShapeError(f"gate dims w1={self.w1.dims} w2={self.w2.dims} inconsistent "
                             f"with ratio {self.ratio}")


def init_caa(rng: np.random.Generator, channels: int, reduced: int,
             num_classes: int, dtype: str = "f64") -> CaaParams:
    if not reduced < channels:
        raise ShapeError(f"reduced width {reduced} must be < channels {channels}")
    return CaaParams(
        reduce=conv_block_params(rng, channels, reduced, 1, dtype=dtype),
        class_head_w=conv_weight(rng, num_classes, channels, 1, 1, dtype),
        class_head_b=zeros((num_classes,), dtype),
        delta=conv_block_params(rng, reduced, channels, 1, dtype=dtype),
        rho=conv_block_params(rng, channels, channels, 1, dtype=dtype),
    )


def init_cca(rng: np.random.Generator, num_classes: int, ratio: int = 150,
             dtype: str = "f64") -> CcaParams:
    hidden = ratio * num_classes
    return CcaParams(
        w1=dense_weight(rng, hidden, num_classes, dtype),
        w2=dense_weight(rng, num_classes, hidden, dtype),
        ratio=ratio,
        gamma=zeros((1,), dtype),
    )


def class_probabilities(p: ClassAttentionMap, tape: Tape | None = None) -> Tensor:
    """Softmax of the class logits over the class axis."""
    return ops.softmax_axis(p.logits, 1, tape=tape)


def class_affinity(xr: Tensor, p: ClassAttentionMap,
                   tape: Tape | None = None) -> ClassAffinityMap:
    """Correlate reduced channels with class confidences over all pixels.

    scores[b,u,k] = sum_i xr[b,u,i] * softmax_class(p)[b,k,i]; the
    affinity map is the row-softmax of scores over the class axis.
    """
    if xr.rank != 4:
        raise ShapeError(f"expected rank-4 reduced features, got {xr.dims}")
    if xr.dims[0] != p.logits.dims[0] or xr.dims[2:] != p.logits.dims[2:]:
        raise ShapeError(f"spatial/batch mismatch: features {xr.dims} "
                         f"vs class logits {p.logits.dims}")
    b, cp, h, w = xr.dims
    probs = class_probabilities(p, tape)
    xr_flat = ops.reshape(xr, (b, cp, h * w), tape=tape)
    probs_flat = ops.reshape(probs, (b, p.num_classes, h * w), tape=tape)
    scores = ops.bmm(xr_flat, ops.transpose_last(probs_flat, tape=tape), tape=tape)
    affinity = ops.softmax_axis(scores, 2, tape=tape)
    return ClassAffinityMap(scores=scores, affinity=affinity)


def cca_gate(p: ClassAttentionMap, gate: CcaParams, tape: Tape | None = None) -> Tensor:
    """Per-class weights in (0,1): sigmoid(w2 . relu(w1 . GAP(softmax(p))))."""
    if p.num_classes != gate.w2.dims[0]:
        raise ShapeError(f"gate built for {gate.w2.dims[0]} classes, got {p.num_classes}")
    probs = class_probabilities(p, tape)
    pooled = ops.global_avg_pool(probs, tape=tape)
    hidden = ops.activation(ops.linear(pooled, gate.w1, tape=tape), "relu", tape=tape)
    return ops.activation(ops.linear(hidden, gate.w2, tape=tape), "sigmoid", tape=tape)


def scale_classes(a: Tensor, f: Tensor, tape: Tape | None = None) -> Tensor:
    """Multiply each class column of [B,U,N] by a per-class factor [B,N]."""
    dt = check_float(a, f)
    if a.rank != 3 or f.rank != 2 or a.dims[0] != f.dims[0] or a.dims[2] != f.dims[1]:
        raise ShapeError(f"scale_classes mismatch: {a.dims} vs {f.dims}")
    out = Tensor(a.data * f.data[:, None, :], dt)
    if tape is not None:
        ad, fd = a.data, f.data
        tape.record("scale_classes", (a, f), out,
                    lambda g: (g * fd[:, None, :], (g * ad).sum(axis=1)))
    return out


def recalibrate_affinity(aff: ClassAffinityMap, weights: Tensor, gamma: Tensor,
                         tape: Tape | None = None) -> Tensor:
    """Rescale affinity columns by (gamma*w + 1) and re-normalize the rows.

    The +1 residual keeps the map unchanged when gamma is zero.
    """
    factor = ops.add_const(ops.scale(weights, gamma, tape=tape), 1.0, tape=tape)
    return ops.softmax_axis(scale_classes(aff.affinity, factor, tape=tape), 2, tape=tape)


def caa_forward(x: Tensor, caa: CaaParams, cca: CcaParams | None = None,
                use_cca: bool = True, training: bool = False,
                tape: Tape | None = None) -> tuple[Tensor, ClassAttentionMap, ClassAffinityMap]:
    """Full class-augmented attention pass.

    Returns the augmented feature map (same dims as x), the class
    attention logits, and the pre-recalibration affinity map.
    """
    if x.rank != 4 or x.dims[1] != caa.channels:
        raise ShapeError(f"input {x.dims} does not match block channels {caa.channels}")
    b, c, h, w = x.dims
    n = caa.num_classes

    xr = ops.conv_block(x, caa.reduce, training, tape=tape)
    logits = ops.conv2d(x, caa.class_head_w, caa.class_head_b, tape=tape)
    p = ClassAttentionMap(logits, n)
    aff = class_affinity(xr, p, tape=tape)

    if use_cca:
        if cca is None:
            raise ShapeError("use_cca=True requires gate parameters")
        weights = cca_gate(p, cca, tape=tape)
        affinity = recalibrate_affinity(aff, weights, cca.gamma, tape=tape)
    else:
        affinity = aff.affinity

    probs_flat = ops.reshape(class_probabilities(p, tape), (b, n, h * w), tape=tape)
    context = ops.reshape(ops.bmm(affinity, probs_flat, tape=tape),
                          (b, caa.reduced, h, w), tape=tape)
    y = ops.conv_block(context, caa.delta, training, tape=tape)
    y = ops.add(y, x, tape=tape)
    y = ops.conv_block(y, caa.rho, training, tape=tape)
    return y, p, aff
