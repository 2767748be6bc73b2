"""Named finite-difference checks for every op and composed module.

Each case builds seeded random inputs, evaluates a scalar probe loss
(a fixed random weighting of the output, so no gradient path is
masked), and compares tape gradients against central differences.
Central differences are only valid away from non-smooth points, so a
case whose forward leaves some ReLU pre-activation within the kink
margin is deterministically rebuilt from the next sub-seed.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import class_attention as ca
from . import network, ops
from . import region_attention as ra
from .gradcheck import grad_check
from .partition import PartitionSpec
from .tape import Tape
from .tensor import Tensor

DEFAULT_TOL = 1e-4
FD_STEP = 1e-5
KINK_MARGIN = 20 * FD_STEP
MAX_REBUILDS = 10

Build = Callable[[np.random.Generator], tuple[Callable, list[Tensor]]]


@dataclass
class GradCase:
    name: str
    build: Build
    tol: float = DEFAULT_TOL
    max_coords: int | None = None
    skip_kinks: bool = False
    noise_gate: float = 0.0


@dataclass
class CheckResult:
    name: str
    seeds: int
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _probe(out: Tensor, weights: np.ndarray, tape: Tape | None) -> Tensor:
    return ops.sum_all(ops.mul(out, Tensor(weights, out.dtype), tape=tape), tape=tape)


def _relu_margin(f) -> float:
    tape = Tape()
    f(tape)
    margin = np.inf
    for rec in tape.records:
        if rec.name == "relu":
            margin = min(margin, float(np.abs(rec.inputs[0].data).min()))
    return margin


def run_case(case: GradCase, seed: int) -> float:
    """Max relative FD error for one case at one seed."""
    stream = zlib.crc32(case.name.encode())
    for attempt in range(MAX_REBUILDS):
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt, stream]))
        f, tensors = case.build(rng)
        if _relu_margin(f) >= KINK_MARGIN:
            break
    return grad_check(f, tensors, h=FD_STEP, max_coords=case.max_coords, rng=rng,
                      skip_kinks=case.skip_kinks, noise_gate=case.noise_gate)


def run_suite(cases: list[GradCase] | None = None, seeds: int = 20,
              progress: Callable[[str], None] | None = None) -> list[CheckResult]:
    results = []
    for case in cases or all_cases():
        worst = 0.0
        for seed in range(seeds):
            worst = max(worst, run_case(case, seed))
        results.append(CheckResult(case.name, seeds, worst, case.tol))
        if progress is not None:
            r = results[-1]
            progress(f"{'PASS' if r.passed else 'FAIL'} {r.name}: "
                     f"max rel err {r.max_rel_err:.3e} over {r.seeds} seeds (tol {r.tol:g})")
    return results


# ---------------------------------------------------------------------------
# case builders


def _away_from_zero(rng, dims):
    return (rng.uniform(0.2, 1.5, dims) * rng.choice([-1.0, 1.0], dims))


def _build_matmul(rng):
    a = Tensor(rng.normal(size=(4, 3)))
    b = Tensor(rng.normal(size=(3, 5)))
    w = rng.normal(size=(4, 5))
    return lambda tape: _probe(ops.matmul(a, b, tape), w, tape), [a, b]


def _build_bmm(rng):
    a = Tensor(rng.normal(size=(2, 3, 4)))
    b = Tensor(rng.normal(size=(2, 4, 2)))
    w = rng.normal(size=(2, 3, 2))
    return lambda tape: _probe(ops.bmm(a, b, tape), w, tape), [a, b]


def _build_channel_linear(rng):
    x = Tensor(rng.normal(size=(2, 4, 5)))
    wt = Tensor(rng.normal(size=(3, 4)))
    bias = Tensor(rng.normal(size=(3,)))
    w = rng.normal(size=(2, 3, 5))
    return lambda tape: _probe(ops.channel_linear(x, wt, bias, tape), w, tape), [x, wt, bias]


def _build_linear(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    wt = Tensor(rng.normal(size=(2, 4)))
    bias = Tensor(rng.normal(size=(2,)))
    w = rng.normal(size=(3, 2))
    return lambda tape: _probe(ops.linear(x, wt, bias, tape), w, tape), [x, wt, bias]


def _build_elementwise(rng):
    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(3, 4)))
    s = Tensor(rng.normal(size=(1,)))
    w = rng.normal(size=(3, 4))

    def f(tape):
        y = ops.mul(ops.add(a, b, tape), a, tape)
        y = ops.scale(ops.add_const(y, 0.7, tape), s, tape)
        return _probe(ops.mul_const(y, -1.3, tape), w, tape)

    return f, [a, b, s]


def _build_relu(rng):
    x = Tensor(_away_from_zero(rng, (3, 5)))
    w = rng.normal(size=(3, 5))
    return lambda tape: _probe(ops.activation(x, "relu", tape), w, tape), [x]


def _build_sigmoid(rng):
    x = Tensor(rng.normal(0, 3, (3, 5)))
    w = rng.normal(size=(3, 5))
    return lambda tape: _probe(ops.activation(x, "sigmoid", tape), w, tape), [x]


def _build_softmax(rng):
    x = Tensor(rng.normal(0, 2, (2, 4, 3)))
    axis = int(rng.integers(0, 3))
    w = rng.normal(size=(2, 4, 3))
    return lambda tape: _probe(ops.softmax_axis(x, axis, tape), w, tape), [x]


def _build_reshape_transpose(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)))
    w = rng.normal(size=(2, 4, 3))

    def f(tape):
        y = ops.transpose_last(x, tape)
        y = ops.reshape(y, (2, 4, 3), tape)
        return _probe(y, w, tape)

    return f, [x]


def _build_concat(rng):
    xs = [Tensor(rng.normal(size=(2, c, 3, 3))) for c in (1, 2, 3)]
    w = rng.normal(size=(2, 6, 3, 3))
    return lambda tape: _probe(ops.concat_channels(xs, tape), w, tape), xs


def _build_upsample(rng):
    x = Tensor(rng.normal(size=(1, 2, 3, 3)))
    w = rng.normal(size=(1, 2, 6, 6))
    return lambda tape: _probe(ops.upsample_nearest(x, 2, tape), w, tape), [x]


def _build_reductions(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)))

    def f(tape):
        a = ops.mean_last(x, tape)
        return ops.add(ops.mean_all(x, tape), ops.sum_all(a, tape), tape)

    return f, [x]


def _build_gap(rng):
    x = Tensor(rng.normal(size=(2, 3, 4, 5)))
    w = rng.normal(size=(2, 3))
    return lambda tape: _probe(ops.global_avg_pool(x, tape), w, tape), [x]


def _build_region_pool(rng):
    x = Tensor(rng.normal(size=(2, 3, 4, 6)))
    spec = PartitionSpec(2, 3, 2, 2)
    w = rng.normal(size=(2, 3, 6))
    return lambda tape: _probe(ops.adaptive_region_pool(x, spec, tape), w, tape), [x]


def _build_conv2d(rng):
    x = Tensor(rng.normal(size=(2, 2, 6, 6)))
    wt = Tensor(rng.normal(size=(3, 2, 3, 3)))
    bias = Tensor(rng.normal(size=(3,)))
    w = rng.normal(size=(2, 3, 3, 3))
    return (lambda tape: _probe(ops.conv2d(x, wt, bias, stride=2, pad=1, tape=tape), w, tape),
            [x, wt, bias])


def _build_conv1x1(rng):
    x = Tensor(rng.normal(size=(1, 3, 4, 4)))
    wt = Tensor(rng.normal(size=(2, 3, 1, 1)))
    w = rng.normal(size=(1, 2, 4, 4))
    return lambda tape: _probe(ops.conv2d(x, wt, tape=tape), w, tape), [x, wt]


def _build_batchnorm(training, rank):
    def build(rng):
        dims = (4, 3, 5) if rank == 3 else (4, 3, 4, 4)
        x = Tensor(rng.normal(1.0, 2.0, dims))
        state = ops.new_batchnorm_state(3)
        state.gamma.data[:] = rng.normal(1.0, 0.3, 3)
        state.beta.data[:] = rng.normal(0.0, 0.3, 3)
        if not training:
            state.running_mean[:] = rng.normal(0, 1, 3)
            state.running_var[:] = rng.uniform(0.5, 2.0, 3)
        w = rng.normal(size=dims)
        return (lambda tape: _probe(ops.batchnorm(x, state, training, tape), w, tape),
                [x, state.gamma, state.beta])

    return build


def _build_cross_entropy(rng):
    # unit-scale logits keep every gradient coordinate well above the
    # central-difference roundoff floor, where the 1e-6 tolerance is valid
    logits = Tensor(rng.normal(0, 1, (2, 4, 2, 2)))
    labels = rng.integers(0, 4, (2, 2, 2))
    return lambda tape: network.cross_entropy_loss(logits, labels, tape), [logits]


def _build_scale_classes(rng):
    a = Tensor(rng.normal(size=(2, 3, 4)))
    f_ = Tensor(rng.normal(size=(2, 4)))
    w = rng.normal(size=(2, 3, 4))
    return lambda tape: _probe(ca.scale_classes(a, f_, tape), w, tape), [a, f_]


def _build_region_weight(rng):
    zm = Tensor(rng.normal(size=(2, 3, 4)))
    xg = Tensor(rng.normal(size=(2, 3, 4, 5)))
    w = rng.normal(size=(2, 3, 4, 5))
    return lambda tape: _probe(ra.region_weight(zm, xg, tape), w, tape), [zm, xg]


def _build_partition_chain(rng):
    x = Tensor(rng.normal(size=(1, 2, 4, 6)))
    spec = PartitionSpec(2, 3, 2, 2)
    w = rng.normal(size=(1, 2, 4, 6))

    def f(tape):
        xg = ra.partition_regions(x, spec, tape)
        xs = ra.shuffle_regroup(xg, spec, tape)
        back = ops.transpose_last(xs, tape)
        return _probe(ra.unpartition_regions(back, spec, tape), w, tape)

    return f, [x]


def _build_sparse_attention(rng):
    xm = Tensor(rng.normal(size=(2, 4, 5)))
    stage = ra.init_rsa_stage(rng, 4, 2)
    stage.mix.data[:] = rng.normal(0, 0.5)
    w = rng.normal(size=(2, 4, 5))
    tensors = [xm, stage.theta_w, stage.phi_w, stage.g_w, stage.g_b, stage.mix,
               stage.theta_bn.gamma, stage.theta_bn.beta, stage.phi_bn.gamma, stage.phi_bn.beta]

    def f(tape):
        _, zm = ra.sparse_self_attention(xm, stage, training=True, tape=tape)
        return _probe(zm, w, tape)

    return f, tensors


def _build_class_affinity(rng):
    xr = Tensor(rng.normal(size=(1, 3, 2, 2)))
    logits = Tensor(rng.normal(size=(1, 2, 2, 2)))
    w = rng.normal(size=(1, 3, 2))

    def f(tape):
        aff = ca.class_affinity(xr, ca.ClassAttentionMap(logits, 2), tape)
        return _probe(aff.affinity, w, tape)

    return f, [xr, logits]


def _build_cca_gate(rng):
    logits = Tensor(rng.normal(size=(2, 3, 4, 4)))
    gate = ca.init_cca(rng, 3, ratio=4)
    w = rng.normal(size=(2, 3))

    def f(tape):
        return _probe(ca.cca_gate(ca.ClassAttentionMap(logits, 3), gate, tape), w, tape)

    return f, [logits, gate.w1, gate.w2]


def _build_recalibrate(rng):
    scores = Tensor(rng.normal(size=(2, 3, 4)))
    weights = Tensor(rng.uniform(0.1, 0.9, (2, 4)))
    gamma = Tensor(rng.normal(size=(1,)))
    w = rng.normal(size=(2, 3, 4))

    def f(tape):
        aff = ca.ClassAffinityMap(scores, ops.softmax_axis(scores, 2, tape))
        return _probe(ca.recalibrate_affinity(aff, weights, gamma, tape), w, tape)

    return f, [scores, weights, gamma]


def _module_tensors(module):
    from .params import named_parameters
    return [t for _, t in named_parameters(module)]


def _build_caa_module(rng):
    x = Tensor(rng.normal(size=(1, 8, 4, 4)))
    caa = ca.init_caa(rng, 8, 2, 2)
    cca = ca.init_cca(rng, 2, ratio=3)
    # a strong gate keeps its weight gradients clear of the FD noise floor
    cca.w1.data *= 3.0
    cca.w2.data *= 3.0
    cca.gamma.data[:] = rng.uniform(0.8, 1.6) * rng.choice([-1.0, 1.0])
    w = rng.normal(size=(1, 8, 4, 4))

    def f(tape):
        y, _, _ = ca.caa_forward(x, caa, cca, use_cca=True, training=True, tape=tape)
        return _probe(y, w, tape)

    return f, [x] + _module_tensors(caa) + _module_tensors(cca)


def _build_rsa_module(rng):
    x = Tensor(rng.normal(size=(1, 4, 8, 8)))
    rsa = ra.init_rsa(rng, 4, 2)
    rsa.stage1.mix.data[:] = rng.normal(0, 0.5)
    rsa.stage2.mix.data[:] = rng.normal(0, 0.5)
    spec = PartitionSpec.from_grid(2, 4, 8, 8)
    w = rng.normal(size=(1, 4, 8, 8))

    def f(tape):
        return _probe(ra.rsa_forward(x, spec, rsa, training=True, tape=tape), w, tape)

    return f, [x] + _module_tensors(rsa)


def _build_full_net(rng):
    x = Tensor(rng.normal(size=(1, 3, 16, 16)))
    net = network.init_net(rng, num_classes=3, grid=(2, 2), cca_ratio=3)
    labels = rng.integers(0, 3, (1, 16, 16))

    def f(tape):
        out = network.net_forward(x, net, training=True, tape=tape)
        main = network.cross_entropy_loss(out.logits, labels, tape)
        cls = network.cross_entropy_loss(out.class_attention.logits,
                                         network.downsample_labels(labels), tape)
        aux = network.cross_entropy_loss(out.aux_logits, labels, tape)
        return network.total_loss(main, cls, aux, network.LossWeights(), tape)

    return f, [x] + _module_tensors(net)


def all_cases() -> list[GradCase]:
    return [
        GradCase("op.matmul", _build_matmul),
        GradCase("op.bmm", _build_bmm),
        GradCase("op.channel_linear", _build_channel_linear),
        GradCase("op.linear", _build_linear),
        GradCase("op.elementwise", _build_elementwise),
        GradCase("op.relu", _build_relu),
        GradCase("op.sigmoid", _build_sigmoid),
        GradCase("op.softmax_axis", _build_softmax),
        GradCase("op.reshape_transpose", _build_reshape_transpose),
        GradCase("op.concat_channels", _build_concat),
        GradCase("op.upsample_nearest", _build_upsample),
        GradCase("op.reductions", _build_reductions),
        GradCase("op.global_avg_pool", _build_gap),
        GradCase("op.adaptive_region_pool", _build_region_pool),
        GradCase("op.conv2d_3x3", _build_conv2d),
        GradCase("op.conv2d_1x1", _build_conv1x1),
        GradCase("op.batchnorm_train", _build_batchnorm(True, 4)),
        GradCase("op.batchnorm_eval", _build_batchnorm(False, 4)),
        GradCase("op.batchnorm_tokens", _build_batchnorm(True, 3)),
        GradCase("op.cross_entropy", _build_cross_entropy, tol=1e-6),
        GradCase("op.scale_classes", _build_scale_classes),
        GradCase("op.region_weight", _build_region_weight),
        GradCase("op.partition_chain", _build_partition_chain),
        GradCase("module.sparse_self_attention", _build_sparse_attention, skip_kinks=True),
        GradCase("module.class_affinity", _build_class_affinity),
        GradCase("module.cca_gate", _build_cca_gate, skip_kinks=True),
        GradCase("module.recalibrate_affinity", _build_recalibrate),
        GradCase("module.caa_forward", _build_caa_module, max_coords=6, skip_kinks=True,
                 noise_gate=1e-5),
        GradCase("module.rsa_forward", _build_rsa_module, max_coords=6, skip_kinks=True,
                 noise_gate=1e-5),
        GradCase("module.full_net", _build_full_net, max_coords=3, skip_kinks=True,
                 noise_gate=1e-5),
    ]
