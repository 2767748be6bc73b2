"""Toy segmentation network: a stride-8 backbone feeding parallel
class-attention and region-attention branches whose outputs are fused
with the local feature and classified at 1/8 resolution.

Supervision combines the main cross-entropy, a class-attention loss on
the mid-network class logits, and an auxiliary loss on the stage-3
head, weighted (1, 0.5, 0.4) by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .class_attention import CaaParams, CcaParams, ClassAttentionMap, caa_forward, init_caa, init_cca
from .errors import LabelError, ShapeError
from .ops import ConvBlock
from .params import conv_block_params, conv_weight
from .partition import PartitionSpec
from .region_attention import RsaParams, init_rsa, rsa_forward
from .tape import Tape
from .tensor import NP_DTYPES, Tensor, zeros

OUTPUT_STRIDE = 8
BACKBONE_WIDTHS = (16, 32, 64, 64)
BACKBONE_STRIDES = (2, 2, 2, 1)


@dataclass
class ToyBackbone:
    """Four 3x3 conv->BN->ReLU blocks with strides (2,2,2,1).

    Stage-3 and stage-4 outputs are exposed; stage-4 is 1/8 of the
    input extent.
    """
    blocks: list[ConvBlock]

    @property
    def out_channels(self) -> int:
        return self.blocks[-1].weight.dims[0]

    @property
    def stage3_channels(self) -> int:
        return self.blocks[-2].weight.dims[0]


def init_backbone(rng: np.random.Generator, in_channels: int = 3,
                  widths=BACKBONE_WIDTHS, dtype: str = "f64") -> ToyBackbone:
    blocks = []
    cin = in_channels
    for width, stride in zip(widths, BACKBONE_STRIDES):
        blocks.append(conv_block_params(rng, cin, width, 3, stride=stride, pad=1, dtype=dtype))
        cin = width
    return ToyBackbone(blocks=blocks)


def backbone_forward(img: Tensor, bb: ToyBackbone, training: bool,
                     tape: Tape | None = None) -> tuple[Tensor, Tensor]:
    x = img
    stage3 = None
    for i, blk in enumerate(bb.blocks):
        x = ops.conv_block(x, blk, training, tape=tape)
        if i == len(bb.blocks) - 2:
            stage3 = x
    return stage3, x


@dataclass
class LossWeights:
    """Balance factors for (main, class-attention, auxiliary) losses."""
    lam_ce: float = 1.0
    lam_cls: float = 0.5
    lam_aux: float = 0.4

    def __post_init__(self):
        if min(self.lam_ce, self.lam_cls, self.lam_aux) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class AttentionSegNet:
    backbone: ToyBackbone
    caa: CaaParams
    cca: CcaParams
    rsa: RsaParams
    grid: tuple[int, int]
    fusion: ConvBlock
    classifier_w: Tensor
    classifier_b: Tensor
    aux_w: Tensor
    aux_b: Tensor
    num_classes: int
    use_cca: bool = True

    @property
    def channels(self) -> int:
        return self.backbone.out_channels


def init_net(rng: np.random.Generator, num_classes: int = 6,
             grid: tuple[int, int] = (4, 4), cca_ratio: int = 150,
             use_cca: bool = True, dtype: str = "f64") -> AttentionSegNet:
    bb = init_backbone(rng, dtype=dtype)
    c = bb.out_channels
    return AttentionSegNet(
        backbone=bb,
        caa=init_caa(rng, c, max(1, c // 4), num_classes, dtype),
        cca=init_cca(rng, num_classes, cca_ratio, dtype),
        rsa=init_rsa(rng, c, max(1, c // 4), dtype),
        grid=grid,
        fusion=conv_block_params(rng, 3 * c, c, 1, dtype=dtype),
        classifier_w=conv_weight(rng, num_classes, c, 1, 1, dtype),
        classifier_b=zeros((num_classes,), dtype),
        aux_w=conv_weight(rng, num_classes, bb.stage3_channels, 1, 1, dtype),
        aux_b=zeros((num_classes,), dtype),
        num_classes=num_classes,
    )


@dataclass
class NetOutputs:
    logits: Tensor                     # [B,K,H,W], upsampled to input resolution
    aux_logits: Tensor                 # [B,K,H,W], stage-3 head upsampled
    class_attention: ClassAttentionMap  # mid-network class logits at 1/8


def net_forward(img: Tensor, net: AttentionSegNet, training: bool = False,
                tape: Tape | None = None, zero_caa: bool = False,
                zero_rsa: bool = False) -> NetOutputs:
    """Run the full network; H and W must be divisible by 8 and by the
    region grid at 1/8 scale."""
    if img.rank != 4:
        raise ShapeError(f"expected [B,3,H,W] image batch, got {img.dims}")
    b, _, h, w = img.dims
    if h % OUTPUT_STRIDE or w % OUTPUT_STRIDE:
        raise ShapeError(f"input extent {h}x{w} not divisible by {OUTPUT_STRIDE}")
    spec = PartitionSpec.from_grid(net.grid[0], net.grid[1],
                                   h // OUTPUT_STRIDE, w // OUTPUT_STRIDE)

    stage3, x = backbone_forward(img, net.backbone, training, tape)

    if zero_caa:
        y = zeros(x.dims, x.dtype)
        logits = ops.conv2d(x, net.caa.class_head_w, net.caa.class_head_b, tape=tape)
        p = ClassAttentionMap(logits, net.num_classes)
    else:
        y, p, _ = caa_forward(x, net.caa, net.cca, use_cca=net.use_cca,
                              training=training, tape=tape)
    z = zeros(x.dims, x.dtype) if zero_rsa else rsa_forward(x, spec, net.rsa, training, tape)

    fused = ops.conv_block(ops.concat_channels([y, z, x], tape=tape),
                           net.fusion, training, tape=tape)
    logits8 = ops.conv2d(fused, net.classifier_w, net.classifier_b, tape=tape)
    logits = ops.upsample_nearest(logits8, OUTPUT_STRIDE, tape=tape)

    aux8 = ops.conv2d(stage3, net.aux_w, net.aux_b, tape=tape)
    aux = ops.upsample_nearest(aux8, OUTPUT_STRIDE, tape=tape)
    return NetOutputs(logits=logits, aux_logits=aux, class_attention=p)


# ---------------------------------------------------------------------------
# losses


def cross_entropy_loss(logits: Tensor, labels: np.ndarray,
                       tape: Tape | None = None) -> Tensor:
    """Mean over all pixels of -log softmax probability at the true class.

    ``logits`` is [B,K,H,W] (or [B,K]); ``labels`` holds integer class
    ids of matching spatial extent.
    """
    lab = np.asarray(labels)
    if logits.rank == 2:
        spatial = logits.data[:, :, None]
        lab_flat = lab.reshape(logits.dims[0], 1)
    elif logits.rank == 4:
        bsz, k, h, w = logits.dims
        if lab.shape != (bsz, h, w):
            raise ShapeError(f"labels {lab.shape} do not match logits {logits.dims}")
        spatial = logits.data.reshape(bsz, k, h * w)
        lab_flat = lab.reshape(bsz, h * w)
    else:
        raise ShapeError(f"cross entropy expects rank-2 or rank-4 logits, got {logits.dims}")
    k = logits.dims[1]
    if lab_flat.min() < 0 or lab_flat.max() >= k:
        raise LabelError(f"labels outside [0, {k})")
    lab_flat = lab_flat.astype(np.int64)

    shifted = spatial - spatial.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    n = lab_flat.size
    bidx = np.arange(spatial.shape[0])[:, None]
    pidx = np.arange(spatial.shape[2])[None, :]
    value = -logp[bidx, lab_flat, pidx].sum() / n
    out = Tensor(np.array([value]), logits.dtype)

    if tape is not None:
        probs = np.exp(logp)

        def vjp(g):
            grad = probs.copy()
            grad[bidx, lab_flat, pidx] -= 1.0
            grad *= g.reshape(-1)[0] / n
            return (grad.reshape(logits.dims).astype(NP_DTYPES[logits.dtype]),)

        tape.record("cross_entropy", (logits,), out, vjp)
    return out


def total_loss(main: Tensor, cls: Tensor, aux: Tensor, weights: LossWeights,
               tape: Tape | None = None) -> Tensor:
    """lam_ce*main + lam_cls*cls + lam_aux*aux."""
    out = ops.mul_const(main, weights.lam_ce, tape=tape)
    out = ops.add(out, ops.mul_const(cls, weights.lam_cls, tape=tape), tape=tape)
    return ops.add(out, ops.mul_const(aux, weights.lam_aux, tape=tape), tape=tape)


def downsample_labels(labels: np.ndarray, factor: int = OUTPUT_STRIDE) -> np.ndarray:
    """Nearest-neighbor label downsampling (top-left sample per cell)."""
    return np.ascontiguousarray(labels[..., ::factor, ::factor])


def poly_lr(iteration: int, max_iter: int, base_lr: float, power: float = 0.9) -> float:
    """base_lr * (1 - (iteration/max_iter)^power)."""
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return base_lr * (1.0 - (iteration / max_iter) ** power)
