"""Static cost model for dense self-attention, region attention, and
class attention heads, plus a wallclock benchmark of the first two.

Conventions, applied uniformly so cross-module ratios are convention
free: one multiply-accumulate = 2 FLOPs; softmax = 4 FLOPs per value;
conv -> BN -> ReLU materializes a single activation (BN and ReLU run in
place). Reported memory is the sum of all activations a module
produces, i.e. the training-style schedule where every intermediate
stays live for the backward pass; parameters are reported separately.
Each module charges a 3x3 dimension-reduction conv on its raw input:
the dense and class heads work at C/4, the region head at C/8.
"""

from __future__ import annotations

import math
import platform
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .partition import PartitionSpec
from .region_attention import init_rsa, rsa_forward
from .tensor import Tensor

MODULE_KINDS = ("sa", "rsa", "caa")


@dataclass(frozen=True)
class LayerCost:
    name: str
    flops: int
    params: int
    activation_bytes: int
    attention: bool = False  # True for the QK / AV affinity products


@dataclass(frozen=True)
class AnalyzerConfig:
    reduce_kernel: int = 3
    sa_reduce_div: int = 4
    caa_reduce_div: int = 4
    rsa_reduce_div: int = 8
    key_div: int = 4
    num_classes: int = 6
    cca_ratio: int = 150
    bytes_per_value: int = 4


@dataclass(frozen=True)
class ComplexityReport:
    kind: str
    b: int
    c: int
    h: int
    w: int
    params: int
    memory_bytes: int
    flops: int
    attention_flops: int
    layers: tuple[LayerCost, ...]
    spec: PartitionSpec | None = None

    def attention_layer_flops(self, name_part: str) -> int:
        return sum(l.flops for l in self.layers if l.attention and name_part in l.name)


class _Builder:
    def __init__(self, bpv: int):
        self.bpv = bpv
        self.layers: list[LayerCost] = []

    def conv(self, name, positions, cin, cout, k, bias=False, bn_relu=False):
        flops = 2 * positions * cin * cout * k * k
        params = cin * cout * k * k
        if bias:
            flops += positions * cout
            params += cout
        if bn_relu:
            flops += 3 * positions * cout
            params += 2 * cout
        self.layers.append(LayerCost(name, flops, params, positions * cout * self.bpv))

    def matmul(self, name, batch, m, k, n, attention=True):
        self.layers.append(LayerCost(name, 2 * batch * m * k * n, 0,
                                     batch * m * n * self.bpv, attention))

    def softmax(self, name, count):
        self.layers.append(LayerCost(name, 4 * count, 0, count * self.bpv))

    def elementwise(self, name, count, flops_per_value=1, materialize=True):
        self.layers.append(LayerCost(name, flops_per_value * count, 0,
                                     count * self.bpv if materialize else 0))

    def permute(self, name, count):
        self.layers.append(LayerCost(name, 0, 0, count * self.bpv))

    def dense(self, name, batch, in_dim, out_dim):
        self.layers.append(LayerCost(name, 2 * batch * in_dim * out_dim,
                                     in_dim * out_dim, batch * out_dim * self.bpv))

    def report(self, kind, b, c, h, w, spec=None) -> ComplexityReport:
        layers = tuple(self.layers)
        return ComplexityReport(
            kind=kind, b=b, c=c, h=h, w=w,
            params=sum(l.params for l in layers),
            memory_bytes=sum(l.activation_bytes for l in layers),
            flops=sum(l.flops for l in layers),
            attention_flops=sum(l.flops for l in layers if l.attention),
            layers=layers,
            spec=spec,
        )


def _analyze_sa(b, c, h, w, cfg: AnalyzerConfig) -> ComplexityReport:
    hw = h * w
    cm = max(1, c // cfg.sa_reduce_div)
    d = max(1, cm // cfg.key_div)
    bd = _Builder(cfg.bytes_per_value)
    bd.conv("reduce3x3", b * hw, c, cm, cfg.reduce_kernel, bn_relu=True)
    bd.conv("theta1x1", b * hw, cm, d, 1)
    bd.conv("phi1x1", b * hw, cm, d, 1)
    bd.matmul("affinity_qk", b, hw, d, hw)
    bd.softmax("affinity_softmax", b * hw * hw)
    bd.conv("value1x1", b * hw, cm, cm, 1, bias=True)
    bd.matmul("aggregate_av", b, cm, hw, hw)
    bd.conv("out1x1", b * hw, cm, cm, 1, bias=True)
    bd.elementwise("residual_add", b * hw * cm)
    return bd.report("sa", b, c, h, w)


def _rsa_stage(bd: _Builder, tag, b, cr, d, tokens, group, hw_cr):
    bd.elementwise(f"{tag}_merge_pool", b * cr * tokens * group, materialize=False)
    bd.layers.append(LayerCost(f"{tag}_merge", 0, 0, b * cr * tokens * bd.bpv))
    bd.conv(f"{tag}_theta", b * tokens, cr, d, 1, bn_relu=True)
    bd.conv(f"{tag}_phi", b * tokens, cr, d, 1, bn_relu=True)
    bd.matmul(f"{tag}_affinity_qk", b, tokens, d, tokens)
    bd.softmax(f"{tag}_affinity_softmax", b * tokens * tokens)
    bd.conv(f"{tag}_value", b * tokens, cr, cr, 1, bias=True)
    bd.matmul(f"{tag}_aggregate_av", b, cr, tokens, tokens)
    bd.elementwise(f"{tag}_mix_residual", 2 * b * tokens * cr, materialize=True)
    bd.elementwise(f"{tag}_region_weight", hw_cr)


def _analyze_rsa(b, c, h, w, spec: PartitionSpec, cfg: AnalyzerConfig) -> ComplexityReport:
    spec.validate(h, w)
    hw = h * w
    cr = max(1, c // cfg.rsa_reduce_div)
    d = max(1, cr // cfg.key_div)
    g, p = spec.regions, spec.positions
    bd = _Builder(cfg.bytes_per_value)
    bd.conv("reduce3x3", b * hw, c, cr, cfg.reduce_kernel, bn_relu=True)
    bd.permute("partition", b * hw * cr)
    _rsa_stage(bd, "stage1", b, cr, d, g, p, b * hw * cr)
    bd.permute("shuffle", b * hw * cr)
    _rsa_stage(bd, "stage2", b, cr, d, p, g, b * hw * cr)
    bd.permute("unshuffle", b * hw * cr)
    bd.permute("unpartition", b * hw * cr)
    return bd.report("rsa", b, c, h, w, spec=spec)


def _analyze_caa(b, c, h, w, cfg: AnalyzerConfig) -> ComplexityReport:
    hw = h * w
    cm = max(1, c // cfg.caa_reduce_div)
    cp = max(1, cm // cfg.key_div)
    n = cfg.num_classes
    hidden = cfg.cca_ratio * n
    bd = _Builder(cfg.bytes_per_value)
    bd.conv("reduce3x3", b * hw, c, cm, cfg.reduce_kernel, bn_relu=True)
    bd.conv("narrow1x1", b * hw, cm, cp, 1, bn_relu=True)
    bd.conv("class_head", b * hw, cm, n, 1, bias=True)
    bd.softmax("class_softmax", b * hw * n)
    bd.matmul("affinity_qk", b, cp, hw, n)
    bd.softmax("affinity_rows", b * cp * n)
    bd.elementwise("gate_pool", b * hw * n, materialize=False)
    bd.dense("gate_up", b, n, hidden)
    bd.dense("gate_down", b, hidden, n)
    bd.elementwise("gate_recalibrate", 3 * b * cp * n, materialize=False)
    bd.softmax("recalibrated_rows", b * cp * n)
    bd.matmul("aggregate_av", b, cp, n, hw)
    bd.conv("lift1x1", b * hw, cp, cm, 1, bn_relu=True)
    bd.elementwise("residual_add", b * hw * cm)
    bd.conv("post1x1", b * hw, cm, cm, 1, bn_relu=True)
    return bd.report("caa", b, c, h, w)


def analyze(kind: str, b: int, c: int, h: int, w: int,
            spec: PartitionSpec | None = None,
            config: AnalyzerConfig = AnalyzerConfig()) -> ComplexityReport:
    """Symbolic cost report for one module invocation at the given geometry."""
    kind = kind.lower()
    if kind == "sa":
        return _analyze_sa(b, c, h, w, config)
    if kind == "rsa":
        if spec is None:
            spec = PartitionSpec.from_grid(8, 8, h, w)
        return _analyze_rsa(b, c, h, w, spec, config)
    if kind == "caa":
        return _analyze_caa(b, c, h, w, config)
    raise ValueError(f"unknown module kind {kind!r}; expected one of {MODULE_KINDS}")


def sweep(kinds: list[str], sizes: list[tuple[int, int]], c: int, b: int = 1,
          fixed_region: tuple[int, int] | None = (16, 16),
          grid: tuple[int, int] | None = None,
          config: AnalyzerConfig = AnalyzerConfig()) -> list[ComplexityReport]:
    """Cost reports across feature sizes.

    The region module holds P_h x P_w fixed by default (the grid grows
    with the image); pass ``grid`` instead to fix G_h x G_w.
    """
    if not kinds or not sizes:
        raise ValueError("sweep needs at least one kind and one size")
    reports = []
    for kind in kinds:
        for h, w in sizes:
            spec = None
            if kind.lower() == "rsa":
                if grid is not None:
                    spec = PartitionSpec.from_grid(grid[0], grid[1], h, w)
                else:
                    ph, pw = fixed_region
                    if h % ph or w % pw:
                        raise ValueError(f"region {ph}x{pw} does not divide {h}x{w}")
                    spec = PartitionSpec(h // ph, w // pw, ph, pw)
            reports.append(analyze(kind, b, c, h, w, spec, config))
    return reports


# ---------------------------------------------------------------------------
# wallclock benchmark


@dataclass
class BenchResult:
    kind: str
    b: int
    c: int
    h: int
    w: int
    median_s: float
    times: list[float] = field(default_factory=list)
    host: str = ""


def _sa_bench_params(rng, c, cfg: AnalyzerConfig, dtype):
    from .params import conv_block_params, dense_weight
    cm = max(1, c // cfg.sa_reduce_div)
    d = max(1, cm // cfg.key_div)
    return {
        "reduce": conv_block_params(rng, c, cm, cfg.reduce_kernel, pad=cfg.reduce_kernel // 2,
                                    dtype=dtype),
        "theta": dense_weight(rng, d, cm, dtype),
        "phi": dense_weight(rng, d, cm, dtype),
        "value": dense_weight(rng, cm, cm, dtype),
        "out": dense_weight(rng, cm, cm, dtype),
        "d": d,
        "cm": cm,
    }


def _sa_bench_forward(x: Tensor, p) -> Tensor:
    x1 = ops.conv_block(x, p["reduce"], training=False)
    b, cm, h, w = x1.dims
    flat = ops.reshape(x1, (b, cm, h * w))
    theta = ops.channel_linear(flat, p["theta"])
    phi = ops.channel_linear(flat, p["phi"])
    scores = ops.mul_const(ops.bmm(ops.transpose_last(theta), phi), 1.0 / math.sqrt(p["d"]))
    probs = ops.softmax_axis(scores, 2)
    values = ops.channel_linear(flat, p["value"])
    agg = ops.bmm(values, ops.transpose_last(probs))
    return ops.add(ops.channel_linear(agg, p["out"]), flat)


def _rsa_bench_params(rng, c, cfg: AnalyzerConfig, dtype):
    from .params import conv_block_params
    cr = max(1, c // cfg.rsa_reduce_div)
    return {
        "reduce": conv_block_params(rng, c, cr, cfg.reduce_kernel, pad=cfg.reduce_kernel // 2,
                                    dtype=dtype),
        "rsa": init_rsa(rng, cr, max(1, cr // cfg.key_div), dtype),
    }


def _rsa_bench_forward(x: Tensor, p, spec: PartitionSpec) -> Tensor:
    x1 = ops.conv_block(x, p["reduce"], training=False)
    return rsa_forward(x1, spec, p["rsa"], training=False)


def wallclock_bench(kind: str, b: int, c: int, h: int, w: int,
                    spec: PartitionSpec | None = None, repetitions: int = 5,
                    warmup: int = 2, threads: int = 1, seed: int = 0,
                    config: AnalyzerConfig = AnalyzerConfig()) -> BenchResult:
    """Median forward time over >= 5 runs, warmup excluded, f32 inputs."""
    if repetitions < 5:
        raise ValueError("need at least 5 repetitions for a stable median")
    from threadpoolctl import threadpool_limits

    kind = kind.lower()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    x = Tensor(rng.standard_normal((b, c, h, w)).astype(np.float32), "f32")
    if kind == "sa":
        p = _sa_bench_params(rng, c, config, "f32")
        run = lambda: _sa_bench_forward(x, p)
    elif kind == "rsa":
        if spec is None:
            spec = PartitionSpec.from_grid(8, 8, h, w)
        p = _rsa_bench_params(rng, c, config, "f32")
        run = lambda: _rsa_bench_forward(x, p, spec)
    else:
        raise ValueError(f"wallclock_bench supports sa/rsa, got {kind!r}")

    times = []
    with threadpool_limits(limits=threads):
        for _ in range(warmup):
            run()
        for _ in range(repetitions):
            t0 = time.perf_counter()
            run()
            times.append(time.perf_counter() - t0)
    host = f"{platform.machine()} {platform.system()} python{platform.python_version()} " \
           f"numpy{np.__version__} threads={threads}"
    return BenchResult(kind=kind, b=b, c=c, h=h, w=w,
                       median_s=statistics.median(times), times=times, host=host)
