"""Region-shuffle attention.

Pixels are grouped into a grid of regions, each region is mean-pooled
to one token, and self-attention over the tokens gates the pixels of
its region. A shuffle then regroups same-offset pixels across regions
and a second identical stage runs on the regrouped layout, so every
pixel attends along two complementary sparse patterns instead of one
dense pixel-to-pixel map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ShapeError
from .ops import BatchNormState
from .params import dense_weight, new_batchnorm_state
from .partition import PartitionSpec
from .tape import Tape
from .tensor import Tensor, check_float, zeros


@dataclass
class RsaStageParams:
    """Token transforms of one attention stage.

    theta/phi are 1x1 conv -> BN -> ReLU pairs producing the key width,
    g is a plain 1x1 conv preserving the channel count, and the mix
    scalar starts at zero so the stage is a no-op at initialization.
    """
    theta_w: Tensor
    theta_bn: BatchNormState
    phi_w: Tensor
    phi_bn: BatchNormState
    g_w: Tensor
    g_b: Tensor
    mix: Tensor


@dataclass
class RsaParams:
    stage1: RsaStageParams
    stage2: RsaStageParams
    key_width: int


def init_rsa_stage(rng: np.random.Generator, channels: int, key_width: int,
                   dtype: str = "f64") -> RsaStageParams:
    return RsaStageParams(
        theta_w=dense_weight(rng, key_width, channels, dtype),
        theta_bn=new_batchnorm_state(key_width, dtype),
        phi_w=dense_weight(rng, key_width, channels, dtype),
        phi_bn=new_batchnorm_state(key_width, dtype),
        g_w=dense_weight(rng, channels, channels, dtype),
        g_b=zeros((channels,), dtype),
        mix=zeros((1,), dtype),
    )


def init_rsa(rng: np.random.Generator, channels: int, key_width: int | None = None,
             dtype: str = "f64") -> RsaParams:
    """Independent parameters per stage; key width defaults to C/4."""
    if key_width is None:
        key_width = max(1, channels // 4)
    return RsaParams(
        stage1=init_rsa_stage(rng, channels, key_width, dtype),
        stage2=init_rsa_stage(rng, channels, key_width, dtype),
        key_width=key_width,
    )


# ---------------------------------------------------------------------------
# permutations


def partition_regions(x: Tensor, spec: PartitionSpec, tape: Tape | None = None) -> Tensor:
    """Rearrange [B,C,H,W] into [B,C,G,P]: region-major, row-major inside."""
    dt = check_float(x)
    if x.rank != 4:
        raise ShapeError(f"partition_regions needs rank-4 input, got {x.dims}")
    b, c, h, w = x.dims
    spec.validate(h, w)
    gh, gw, ph, pw = spec.g_h, spec.g_w, spec.p_h, spec.p_w
    data = (x.data.reshape(b, c, gh, ph, gw, pw)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, gh * gw, ph * pw))
    out = Tensor(np.ascontiguousarray(data), dt)
    if tape is not None:
        def vjp(g):
            back = (g.reshape(b, c, gh, gw, ph, pw)
                    .transpose(0, 1, 2, 4, 3, 5)
                    .reshape(b, c, h, w))
            return (np.ascontiguousarray(back),)
        tape.record("partition_regions", (x,), out, vjp)
    return out


def unpartition_regions(xg: Tensor, spec: PartitionSpec, tape: Tape | None = None) -> Tensor:
    """Inverse of partition_regions: [B,C,G,P] back to [B,C,H,W]."""
    dt = check_float(xg)
    if xg.rank != 4 or xg.dims[2] != spec.regions or xg.dims[3] != spec.positions:
        raise ShapeError(f"unpartition_regions: {xg.dims} does not match {spec}")
    b, c = xg.dims[:2]
    gh, gw, ph, pw = spec.g_h, spec.g_w, spec.p_h, spec.p_w
    h, w = gh * ph, gw * pw
    data = (xg.data.reshape(b, c, gh, gw, ph, pw)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h, w))
    out = Tensor(np.ascontiguousarray(data), dt)
    if tape is not None:
        def vjp(g):
            back = (g.reshape(b, c, gh, ph, gw, pw)
                    .transpose(0, 1, 2, 4, 3, 5)
                    .reshape(b, c, gh * gw, ph * pw))
            return (np.ascontiguousarray(back),)
        tape.record("unpartition_regions", (xg,), out, vjp)
    return out


def shuffle_regroup(xg: Tensor, spec: PartitionSpec | None = None,
                    tape: Tape | None = None) -> Tensor:
    """Regroup [B,C,G,P] to [B,C,P,G]: group p collects offset-p pixels of all regions."""
    if xg.rank != 4:
        raise ShapeError(f"shuffle_regroup needs rank-4 input, got {xg.dims}")
    if spec is not None and (xg.dims[2] != spec.regions or xg.dims[3] != spec.positions):
        raise ShapeError(f"shuffle_regroup: {xg.dims} does not match {spec}")
    return ops.transpose_last(xg, tape=tape)


def merge_regions(xg: Tensor, tape: Tape | None = None) -> Tensor:
    """Mean over each region's positions: [B,C,G,P] -> [B,C,G]."""
    if xg.rank != 4:
        raise ShapeError(f"merge_regions needs rank-4 input, got {xg.dims}")
    return ops.mean_last(xg, tape=tape)


def region_weight(zm: Tensor, xg: Tensor, tape: Tape | None = None) -> Tensor:
    """Gate pixels by their region token: out[b,c,g,p] = zm[b,c,g] * xg[b,c,g,p]."""
    dt = check_float(zm, xg)
    if zm.rank != 3 or xg.rank != 4 or zm.dims != xg.dims[:3]:
        raise ShapeError(f"region_weight mismatch: {zm.dims} vs {xg.dims}")
    out = Tensor(xg.data * zm.data[..., None], dt)
    if tape is not None:
        zd, xd = zm.data, xg.data
        tape.record("region_weight", (zm, xg), out,
                    lambda g: ((g * xd).sum(axis=-1), g * zd[..., None]))
    return out


# ---------------------------------------------------------------------------
# attention over tokens


def sparse_self_attention(xm: Tensor, stage: RsaStageParams, training: bool = False,
                          tape: Tape | None = None) -> tuple[Tensor, Tensor]:
    """Self-attention over region tokens [B,C,G].

    Returns the row-stochastic affinity [B,G,G] and the gated tokens
    mix*(g(xm) aggregated by the affinity) + xm.
    """
    if xm.rank != 3:
        raise ShapeError(f"sparse_self_attention needs rank-3 tokens, got {xm.dims}")
    d = stage.theta_w.dims[0]
    theta = ops.activation(ops.batchnorm(
        ops.channel_linear(xm, stage.theta_w, tape=tape), stage.theta_bn, training,
        tape=tape), "relu", tape=tape)
    phi = ops.activation(ops.batchnorm(
        ops.channel_linear(xm, stage.phi_w, tape=tape), stage.phi_bn, training,
        tape=tape), "relu", tape=tape)
    scores = ops.bmm(ops.transpose_last(theta, tape=tape), phi, tape=tape)
    scores = ops.mul_const(scores, 1.0 / math.sqrt(d), tape=tape)
    am = ops.softmax_axis(scores, 2, tape=tape)
    values = ops.channel_linear(xm, stage.g_w, stage.g_b, tape=tape)
    agg = ops.bmm(values, ops.transpose_last(am, tape=tape), tape=tape)
    zm = ops.add(ops.scale(agg, stage.mix, tape=tape), xm, tape=tape)
    return am, zm


def rsa_forward(x: Tensor, spec: PartitionSpec, rsa: RsaParams,
                training: bool = False, tape: Tape | None = None) -> Tensor:
    """Two-stage region attention; output matches the input dims."""
    xg = partition_regions(x, spec, tape=tape)
    xm = merge_regions(xg, tape=tape)
    _, zm1 = sparse_self_attention(xm, rsa.stage1, training, tape=tape)
    xg = region_weight(zm1, xg, tape=tape)

    xs = shuffle_regroup(xg, spec, tape=tape)
    xm2 = merge_regions(xs, tape=tape)
    _, zm2 = sparse_self_attention(xm2, rsa.stage2, training, tape=tape)
    xs = region_weight(zm2, xs, tape=tape)

    back = shuffle_regroup(xs, tape=tape)  # the regrouping is its own inverse
    return unpartition_regions(back, spec, tape=tape)


# ---------------------------------------------------------------------------
# complexity of the attention products


@dataclass(frozen=True)
class RegionAttentionFlops:
    """Affinity-product cost of region attention vs dense self-attention.

    ``rsa`` follows the closed-form count 2*(1/(G_h^2 G_w^2) +
    1/(P_h^2 P_w^2))*(HW)^2*C; ``rsa_termwise`` is the per-stage sum
    (G_h G_w)^2*C + (P_h P_w)^2*C, which is exactly half: the closed
    form carries a leading factor 2 that a stage-by-stage count does
    not produce. Both are reported.
    """
    rsa: int
    rsa_termwise: int
    sa: int
    ratio: float


def rsa_attention_flops(spec: PartitionSpec, h: int, w: int, c: int) -> RegionAttentionFlops:
    """Evaluate the affinity-term complexity for a given geometry.

    Counts are symbolic products with a uniform MAC convention, so the
    ratio is convention-free.
    """
    spec.validate(h, w)
    hw = h * w
    sa = hw * hw * c
    g2 = (spec.g_h * spec.g_w) ** 2
    p2 = (spec.p_h * spec.p_w) ** 2
    termwise = (g2 + p2) * c
    rsa = 2 * termwise
    return RegionAttentionFlops(rsa=rsa, rsa_termwise=termwise, sa=sa, ratio=rsa / sa)
