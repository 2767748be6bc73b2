"""Differentiable primitive ops.

Each op computes its forward with numpy and, when given a tape, records
a closure returning the vector-Jacobian product for every input. Ops
never mutate their inputs; batchnorm in training mode mutates only the
explicitly passed running statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .partition import PartitionSpec
from .tape import Tape
from .tensor import NP_DTYPES, Tensor, check_float


def _out(data, dtype: str) -> Tensor:
    return Tensor(data, dtype)


# ---------------------------------------------------------------------------
# matrix products


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Product of rank-2 tensors [m,k] x [k,n] -> [m,n]."""
    dt = check_float(a, b)
    if a.rank != 2 or b.rank != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.dims} and {b.dims}")
    if a.dims[1] != b.dims[0]:
        raise ShapeError(f"matmul inner dims differ: {a.dims} x {b.dims}")
    out = _out(a.data @ b.data, dt)
    if tape is not None:
        ad, bd = a.data, b.data
        tape.record("matmul", (a, b), out,
                    lambda g: (g @ bd.T, ad.T @ g))
    return out


def bmm(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Batched product [B,m,k] x [B,k,n] -> [B,m,n]."""
    dt = check_float(a, b)
    if a.rank != 3 or b.rank != 3:
        raise ShapeError(f"bmm needs rank-3 operands, got {a.dims} and {b.dims}")
    if a.dims[0] != b.dims[0] or a.dims[2] != b.dims[1]:
        raise ShapeError(f"bmm shape mismatch: {a.dims} x {b.dims}")
    out = _out(np.matmul(a.data, b.data), dt)
    if tape is not None:
        ad, bd = a.data, b.data
        tape.record("bmm", (a, b), out,
                    lambda g: (np.matmul(g, bd.transpose(0, 2, 1)),
                               np.matmul(ad.transpose(0, 2, 1), g)))
    return out


def channel_linear(x: Tensor, w: Tensor, bias: Tensor | None = None,
                   tape: Tape | None = None) -> Tensor:
    """Per-position channel mix [B,C,T] x [O,C] -> [B,O,T] (a 1x1 conv over tokens)."""
    dt = check_float(x, w)
    if x.rank != 3 or w.rank != 2 or w.dims[1] != x.dims[1]:
        raise ShapeError(f"channel_linear: x {x.dims} incompatible with w {w.dims}")
    data = np.matmul(w.data, x.data)
    if bias is not None:
        check_float(x, bias)
        data = data + bias.data[:, None]
    out = _out(data, dt)
    if tape is not None:
        xd, wd = x.data, w.data
        if bias is None:
            tape.record("channel_linear", (x, w), out,
                        lambda g: (np.matmul(wd.T, g),
                                   np.matmul(g, xd.transpose(0, 2, 1)).sum(axis=0)))
        else:
            tape.record("channel_linear", (x, w, bias), out,
                        lambda g: (np.matmul(wd.T, g),
                                   np.matmul(g, xd.transpose(0, 2, 1)).sum(axis=0),
                                   g.sum(axis=(0, 2))))
    return out


def linear(x: Tensor, w: Tensor, bias: Tensor | None = None,
           tape: Tape | None = None) -> Tensor:
    """Affine map [B,F] x [O,F] -> [B,O]."""
    dt = check_float(x, w)
    if x.rank != 2 or w.rank != 2 or w.dims[1] != x.dims[1]:
        raise ShapeError(f"linear: x {x.dims} incompatible with w {w.dims}")
    data = x.data @ w.data.T
    if bias is not None:
        data = data + bias.data
    out = _out(data, dt)
    if tape is not None:
        xd, wd = x.data, w.data
        if bias is None:
            tape.record("linear", (x, w), out,
                        lambda g: (g @ wd, g.T @ xd))
        else:
            tape.record("linear", (x, w, bias), out,
                        lambda g: (g @ wd, g.T @ xd, g.sum(axis=0)))
    return out


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    dt = check_float(a, b)
    if a.dims != b.dims:
        raise ShapeError(f"add shape mismatch: {a.dims} vs {b.dims}")
    out = _out(a.data + b.data, dt)
    if tape is not None:
        tape.record("add", (a, b), out, lambda g: (g, g))
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    dt = check_float(a, b)
    if a.dims != b.dims:
        raise ShapeError(f"mul shape mismatch: {a.dims} vs {b.dims}")
    out = _out(a.data * b.data, dt)
    if tape is not None:
        ad, bd = a.data, b.data
        tape.record("mul", (a, b), out, lambda g: (g * bd, g * ad))
    return out


def add_const(x: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    dt = check_float(x)
    out = _out(x.data + c, dt)
    if tape is not None:
        tape.record("add_const", (x,), out, lambda g: (g,))
    return out


def mul_const(x: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    dt = check_float(x)
    out = _out(x.data * c, dt)
    if tape is not None:
        tape.record("mul_const", (x,), out, lambda g: (g * c,))
    return out


def scale(x: Tensor, s: Tensor, tape: Tape | None = None) -> Tensor:
    """Multiply by a learnable scalar (single-element tensor)."""
    dt = check_float(x, s)
    if s.size != 1:
        raise ShapeError(f"scale needs a single-element factor, got dims {s.dims}")
    out = _out(x.data * s.data.reshape(-1)[0], dt)
    if tape is not None:
        xd, sv = x.data, s.data.reshape(-1)[0]
        tape.record("scale", (x, s), out,
                    lambda g: (g * sv, np.array([(g * xd).sum()], dtype=g.dtype)))
    return out


def activation(x: Tensor, kind: str, tape: Tape | None = None) -> Tensor:
    """Elementwise relu(x)=max(0,x) or sigmoid(x)=1/(1+e^-x)."""
    dt = check_float(x)
    if kind == "relu":
        out = _out(np.maximum(x.data, 0), dt)
        if tape is not None:
            mask = x.data > 0
            tape.record("relu", (x,), out, lambda g: (g * mask,))
        return out
    if kind == "sigmoid":
        y = _stable_sigmoid(x.data)
        out = _out(y, dt)
        if tape is not None:
            yd = out.data
            tape.record("sigmoid", (x,), out, lambda g: (g * yd * (1.0 - yd),))
        return out
    raise ValueError(f"unknown activation kind {kind!r}")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return y


def softmax_axis(x: Tensor, axis: int, tape: Tape | None = None) -> Tensor:
    """Softmax along one axis, computed with max-subtraction."""
    dt = check_float(x)
    if not -x.rank <= axis < x.rank:
        raise ShapeError(f"softmax axis {axis} out of range for rank {x.rank}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _out(y, dt)
    if tape is not None:
        yd = out.data
        tape.record("softmax", (x,), out,
                    lambda g: (yd * (g - (g * yd).sum(axis=axis, keepdims=True)),))
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, dims, tape: Tape | None = None) -> Tensor:
    dt = check_float(x)
    out = _out(x.data.reshape(dims), dt)
    if tape is not None:
        orig = x.dims
        tape.record("reshape", (x,), out, lambda g: (g.reshape(orig),))
    return out


def transpose_last(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Swap the trailing two axes."""
    dt = check_float(x)
    if x.rank < 2:
        raise ShapeError("transpose_last needs rank >= 2")
    out = _out(np.ascontiguousarray(x.data.swapaxes(-1, -2)), dt)
    if tape is not None:
        tape.record("transpose_last", (x,), out,
                    lambda g: (np.ascontiguousarray(g.swapaxes(-1, -2)),))
    return out


def concat_channels(xs: list[Tensor], tape: Tape | None = None) -> Tensor:
    """Stack [B,Ci,H,W] tensors along the channel axis in argument order."""
    if not xs:
        raise ShapeError("concat_channels needs at least one input")
    dt = check_float(*xs)
    ref = xs[0]
    if ref.rank != 4:
        raise ShapeError(f"concat_channels needs rank-4 inputs, got {ref.dims}")
    for t in xs[1:]:
        if t.rank != 4 or t.dims[0] != ref.dims[0] or t.dims[2:] != ref.dims[2:]:
            raise ShapeError(f"concat_channels mismatch: {ref.dims} vs {t.dims}")
    out = _out(np.concatenate([t.data for t in xs], axis=1), dt)
    if tape is not None:
        splits = np.cumsum([t.dims[1] for t in xs])[:-1]
        tape.record("concat_channels", tuple(xs), out,
                    lambda g: tuple(np.split(g, splits, axis=1)))
    return out


def upsample_nearest(x: Tensor, factor: int, tape: Tape | None = None) -> Tensor:
    """Nearest-neighbor upsampling of [B,C,H,W] by an integer factor."""
    dt = check_float(x)
    if x.rank != 4:
        raise ShapeError(f"upsample_nearest needs rank-4 input, got {x.dims}")
    if factor < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    data = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    out = _out(data, dt)
    if tape is not None:
        b, c, h, w = x.dims
        tape.record("upsample_nearest", (x,), out,
                    lambda g: (g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)),))
    return out


# ---------------------------------------------------------------------------
# reductions and pooling


def sum_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    dt = check_float(x)
    out = _out(np.array([x.data.sum()]), dt)
    if tape is not None:
        dims = x.dims
        tape.record("sum_all", (x,), out,
                    lambda g: (np.broadcast_to(g.reshape(-1)[0], dims).copy(),))
    return out


def mean_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    dt = check_float(x)
    n = x.size
    out = _out(np.array([x.data.mean()]), dt)
    if tape is not None:
        dims = x.dims
        tape.record("mean_all", (x,), out,
                    lambda g: (np.broadcast_to(g.reshape(-1)[0] / n, dims).copy(),))
    return out


def mean_last(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Mean over the trailing axis."""
    dt = check_float(x)
    n = x.dims[-1]
    out = _out(x.data.mean(axis=-1), dt)
    if tape is not None:
        tape.record("mean_last", (x,), out,
                    lambda g: (np.repeat(g[..., None], n, axis=-1) / n,))
    return out


def global_avg_pool(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Spatial mean of [B,C,H,W] -> [B,C]."""
    dt = check_float(x)
    if x.rank != 4:
        raise ShapeError(f"global_avg_pool needs rank-4 input, got {x.dims}")
    b, c, h, w = x.dims
    out = _out(x.data.mean(axis=(2, 3)), dt)
    if tape is not None:
        tape.record("global_avg_pool", (x,), out,
                    lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), (b, c, h, w)).copy(),))
    return out


def adaptive_region_pool(x: Tensor, spec: PartitionSpec, tape: Tape | None = None) -> Tensor:
    """Mean over each P_h x P_w region of [B,C,H,W] -> [B,C,G_h*G_w].

    The geometry must divide evenly; no implicit padding.
    """
    dt = check_float(x)
    if x.rank != 4:
        raise ShapeError(f"adaptive_region_pool needs rank-4 input, got {x.dims}")
    b, c, h, w = x.dims
    spec.validate(h, w)
    gh, gw, ph, pw = spec.g_h, spec.g_w, spec.p_h, spec.p_w
    blocks = x.data.reshape(b, c, gh, ph, gw, pw)
    out = _out(blocks.mean(axis=(3, 5)).reshape(b, c, gh * gw), dt)
    if tape is not None:
        def vjp(g):
            gb = g.reshape(b, c, gh, 1, gw, 1) / (ph * pw)
            return (np.broadcast_to(gb, (b, c, gh, ph, gw, pw)).reshape(b, c, h, w).copy(),)
        tape.record("adaptive_region_pool", (x,), out, vjp)
    return out


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0, tape: Tape | None = None) -> Tensor:
    """Cross-correlation of [B,Cin,H,W] with [Cout,Cin,kh,kw] kernels.

    Output extent is floor((H + 2*pad - kh)/stride) + 1. Kernels are 1x1
    or 3x3, the only sizes the attention heads and toy backbone use.
    """
    dt = check_float(x, weight)
    if x.rank != 4 or weight.rank != 4:
        raise ShapeError(f"conv2d needs rank-4 x and weight, got {x.dims}, {weight.dims}")
    b, cin, h, w = x.dims
    cout, cin_w, kh, kw = weight.dims
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    if kh not in (1, 3) or kw not in (1, 3):
        raise ShapeError(f"conv2d supports 1x1 and 3x3 kernels, got {kh}x{kw}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d invalid stride={stride} pad={pad}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output would be empty for input {h}x{w}, "
                         f"kernel {kh}x{kw}, stride {stride}, pad {pad}")
    if bias is not None:
        check_float(x, bias)
        if bias.dims != (cout,):
            raise ShapeError(f"conv2d bias dims {bias.dims} != ({cout},)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)          # [B, Cin*kh*kw, OH*OW]
    wmat = weight.data.reshape(cout, cin * kh * kw)
    data = np.matmul(wmat, cols).reshape(b, cout, oh, ow)
    if bias is not None:
        data += bias.data[None, :, None, None]
    out = _out(data, dt)

    if tape is not None:
        xp_shape = xp.shape

        def vjp(g):
            gmat = g.reshape(b, cout, oh * ow)
            dw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
            dcols = np.matmul(wmat.T, gmat)
            dxp = _col2im(dcols.reshape(b, cin, kh, kw, oh, ow), xp_shape, stride, oh, ow)
            dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
            grads = [np.ascontiguousarray(dx), dw.reshape(weight.dims)]
            if bias is not None:
                grads.append(g.sum(axis=(0, 2, 3)))
            return tuple(grads)

        inputs = (x, weight) if bias is None else (x, weight, bias)
        tape.record("conv2d", inputs, out, vjp)
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, s: int, oh: int, ow: int) -> np.ndarray:
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + s * oh:s, j:j + s * ow:s]
    return cols.reshape(b, c * kh * kw, oh * ow)


def _col2im(dcols: np.ndarray, xp_shape, s: int, oh: int, ow: int) -> np.ndarray:
    _, _, kh, kw, _, _ = dcols.shape
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += dcols[:, :, i, j]
    return dxp


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BatchNormState:
    """Per-channel affine scale/shift plus running statistics.

    Training mode normalizes by batch statistics and updates the running
    buffers as running = momentum*running + (1-momentum)*batch; eval mode
    normalizes by the running buffers. epsilon keeps the variance
    denominator positive.
    """
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError(f"epsilon must be positive, got {self.eps}")
        if (self.running_var < 0).any():
            raise ValueError("running variance must be non-negative")

    @property
    def channels(self) -> int:
        return self.gamma.dims[0]


def new_batchnorm_state(channels: int, dtype: str = "f64",
                        momentum: float = 0.9, eps: float = 1e-5) -> BatchNormState:
    npdt = NP_DTYPES[dtype]
    return BatchNormState(
        gamma=Tensor(np.ones(channels, dtype=npdt), dtype),
        beta=Tensor(np.zeros(channels, dtype=npdt), dtype),
        running_mean=np.zeros(channels, dtype=npdt),
        running_var=np.ones(channels, dtype=npdt),
        momentum=momentum,
        eps=eps,
    )


def batchnorm(x: Tensor, state: BatchNormState, training: bool,
              tape: Tape | None = None) -> Tensor:
    """Normalize channel axis 1 of a rank 2..4 tensor."""
    dt = check_float(x, state.gamma, state.beta)
    if x.rank < 2 or x.dims[1] != state.channels:
        raise ShapeError(f"batchnorm: input {x.dims} does not match {state.channels} channels")
    axes = (0,) + tuple(range(2, x.rank))
    bshape = (1, state.channels) + (1,) * (x.rank - 2)
    gamma, beta = state.gamma, state.beta

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.running_mean += (1.0 - state.momentum) * (mean - state.running_mean)
        state.running_var += (1.0 - state.momentum) * (var - state.running_var)
    else:
        mean = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = _out(gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape), dt)

    if tape is not None:
        m = x.size // state.channels
        gadr = gamma.data.reshape(bshape)
        istdr = inv_std.reshape(bshape)

        if training:
            def vjp(g):
                dxhat = g * gadr
                dsum = dxhat.sum(axis=axes, keepdims=True)
                dxsum = (dxhat * xhat).sum(axis=axes, keepdims=True)
                dx = istdr / m * (m * dxhat - dsum - xhat * dxsum)
                return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
        else:
            def vjp(g):
                return (g * gadr * istdr,
                        (g * xhat).sum(axis=axes), g.sum(axis=axes))

        tape.record("batchnorm", (x, gamma, beta), out, vjp)
    return out


# ---------------------------------------------------------------------------
# conv -> BN -> ReLU transform block


@dataclass
class ConvBlock:
    """The recurring transform: conv (no bias) -> batchnorm -> relu."""
    weight: Tensor
    bn: BatchNormState
    stride: int = 1
    pad: int = 0
    relu: bool = True


def conv_block(x: Tensor, blk: ConvBlock, training: bool,
               tape: Tape | None = None) -> Tensor:
    y = conv2d(x, blk.weight, stride=blk.stride, pad=blk.pad, tape=tape)
    y = batchnorm(y, blk.bn, training, tape=tape)
    if blk.relu:
        y = activation(y, "relu", tape=tape)
    return y
