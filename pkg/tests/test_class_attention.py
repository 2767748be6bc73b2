import numpy as np
import pytest

from segattn import class_attention as ca
from segattn import ops
from segattn.errors import ShapeError
from segattn.tensor import Tensor

from oracles import class_affinity_oracle


def make_map(logits):
    t = Tensor(np.asarray(logits, dtype=np.float64))
    return ca.ClassAttentionMap(t, t.dims[1])


class TestClassAffinity:
    def test_uniform_probabilities_sum_channel(self):
        # 3 live pixels [1,2,3] (and one zero), two classes with equal logits:
        # every score is half the channel sum
        xr = Tensor(np.array([1.0, 2.0, 3.0, 0.0]).reshape(1, 1, 2, 2))
        p = make_map(np.zeros((1, 2, 2, 2)))
        aff = ca.class_affinity(xr, p)
        np.testing.assert_allclose(aff.scores.data[0, 0], [3.0, 3.0])
        np.testing.assert_allclose(aff.affinity.data[0, 0], [0.5, 0.5])

    def test_one_hot_limit(self):
        xr = Tensor(np.arange(1.0, 5.0).reshape(1, 1, 2, 2))
        logits = np.zeros((1, 2, 2, 2))
        logits[:, 0] = 50.0
        aff = ca.class_affinity(xr, make_map(logits))
        np.testing.assert_allclose(aff.scores.data[0, 0, 0], xr.data.sum())
        assert abs(aff.scores.data[0, 0, 1]) < 1e-12

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(12)
        xr = Tensor(rng.normal(size=(1, 3, 2, 2)))
        logits = Tensor(rng.normal(size=(1, 3, 2, 2)))
        aff = ca.class_affinity(xr, make_map(logits.data))
        want = class_affinity_oracle(xr.data, logits.data)
        np.testing.assert_allclose(aff.scores.data, want, rtol=1e-13, atol=1e-14)

    def test_rows_of_affinity_are_stochastic(self):
        rng = np.random.default_rng(13)
        xr = Tensor(rng.normal(size=(2, 4, 3, 3)))
        aff = ca.class_affinity(xr, make_map(rng.normal(size=(2, 5, 3, 3))))
        np.testing.assert_allclose(aff.affinity.data.sum(axis=2), 1.0, atol=1e-6)
        assert (aff.affinity.data > 0).all()

    def test_shape_mismatch(self):
        xr = Tensor(np.zeros((1, 2, 2, 2)))
        with pytest.raises(ShapeError):
            ca.class_affinity(xr, make_map(np.zeros((1, 2, 3, 3))))

    def test_class_relabel_equivariance(self):
        rng = np.random.default_rng(14)
        xr = Tensor(rng.normal(size=(1, 3, 2, 3)))
        logits = rng.normal(size=(1, 4, 2, 3))
        perm = rng.permutation(4)
        base = ca.class_affinity(xr, make_map(logits))
        permuted = ca.class_affinity(xr, make_map(logits[:, perm]))
        np.testing.assert_allclose(permuted.scores.data, base.scores.data[:, :, perm])
        np.testing.assert_allclose(permuted.affinity.data, base.affinity.data[:, :, perm])


class TestCcaGate:
    def test_zero_weights_give_half(self):
        rng = np.random.default_rng(15)
        gate = ca.init_cca(rng, 3, ratio=2)
        gate.w1.data[:] = 0.0
        gate.w2.data[:] = 0.0
        out = ca.cca_gate(make_map(rng.normal(size=(2, 3, 2, 2))), gate)
        np.testing.assert_array_equal(out.data, np.full((2, 3), 0.5))

    def test_uniform_logits_structure(self):
        rng = np.random.default_rng(16)
        gate = ca.init_cca(rng, 4, ratio=3)
        out = ca.cca_gate(make_map(np.zeros((1, 4, 2, 2))), gate)
        pooled = np.full(4, 0.25)
        hidden = np.maximum(gate.w1.data @ pooled, 0.0)
        want = 1.0 / (1.0 + np.exp(-(gate.w2.data @ hidden)))
        np.testing.assert_allclose(out.data[0], want, rtol=1e-12)

    def test_matches_stepwise_arithmetic(self):
        rng = np.random.default_rng(17)
        gate = ca.init_cca(rng, 3, ratio=2)
        logits = rng.normal(size=(2, 3, 2, 2))
        out = ca.cca_gate(make_map(logits), gate)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs = e / e.sum(axis=1, keepdims=True)
        pooled = probs.mean(axis=(2, 3))
        hidden = np.maximum(pooled @ gate.w1.data.T, 0.0)
        want = 1.0 / (1.0 + np.exp(-(hidden @ gate.w2.data.T)))
        np.testing.assert_allclose(out.data, want, rtol=1e-12)
        assert ((out.data > 0) & (out.data < 1)).all()


class TestRecalibrate:
    @staticmethod
    def _affinity(rng, b=2, u=3, n=4):
        scores = Tensor(rng.normal(size=(b, u, n)))
        return ca.ClassAffinityMap(scores, ops.softmax_axis(scores, 2))

    def test_gamma_zero_is_plain_row_softmax(self):
        rng = np.random.default_rng(18)
        aff = self._affinity(rng)
        w1 = Tensor(rng.uniform(0, 1, (2, 4)))
        w2 = Tensor(rng.uniform(0, 1, (2, 4)))
        gamma = Tensor(np.zeros(1))
        out1 = ca.recalibrate_affinity(aff, w1, gamma)
        out2 = ca.recalibrate_affinity(aff, w2, gamma)
        want = ops.softmax_axis(aff.affinity, 2)
        np.testing.assert_array_equal(out1.data, want.data)
        np.testing.assert_array_equal(out2.data, want.data)

    def test_constant_weights_preserve_row_argmax(self):
        rng = np.random.default_rng(19)
        aff = self._affinity(rng)
        w = Tensor(np.full((2, 4), 0.37))
        for gamma in (0.0, 0.5, 2.0):
            out = ca.recalibrate_affinity(aff, w, Tensor(np.array([gamma])))
            np.testing.assert_array_equal(np.argmax(out.data, axis=2),
                                          np.argmax(aff.affinity.data, axis=2))

    def test_matches_direct_evaluation(self):
        rng = np.random.default_rng(20)
        aff = self._affinity(rng)
        w = Tensor(rng.uniform(0, 1, (2, 4)))
        gamma = Tensor(np.array([0.8]))
        out = ca.recalibrate_affinity(aff, w, gamma)
        scaled = aff.affinity.data * (0.8 * w.data + 1.0)[:, None, :]
        e = np.exp(scaled - scaled.max(axis=2, keepdims=True))
        want = e / e.sum(axis=2, keepdims=True)
        np.testing.assert_allclose(out.data, want, rtol=1e-13)


class TestCaaForward:
    def test_output_shape_contract(self):
        rng = np.random.default_rng(21)
        x = Tensor(rng.normal(size=(1, 8, 4, 4)))
        caa = ca.init_caa(rng, 8, 2, 2)
        cca = ca.init_cca(rng, 2, ratio=2)
        y, p, aff = ca.caa_forward(x, caa, cca)
        assert y.dims == x.dims
        assert p.logits.dims == (1, 2, 4, 4)
        assert aff.affinity.dims == (1, 2, 2)

    def test_uniform_class_map_gives_constant_context(self):
        # rows of the affinity sum to 1, so mixing identical 1/N maps
        # yields a spatially constant 1/N context plane
        rng = np.random.default_rng(22)
        xr = Tensor(rng.normal(size=(1, 3, 2, 2)))
        n = 4
        p = make_map(np.zeros((1, n, 2, 2)))
        aff = ca.class_affinity(xr, p)
        probs = ops.reshape(ca.class_probabilities(p), (1, n, 4))
        context = ops.bmm(aff.affinity, probs)
        np.testing.assert_allclose(context.data, 1.0 / n, atol=1e-12)

    def test_gate_at_zero_matches_extra_softmax_bitwise(self):
        rng = np.random.default_rng(23)
        x = Tensor(rng.normal(size=(1, 8, 4, 4)))
        caa = ca.init_caa(rng, 8, 2, 3)
        cca = ca.init_cca(rng, 3, ratio=2)
        assert cca.gamma.item() == 0.0
        y_gated, _, _ = ca.caa_forward(x, caa, cca, use_cca=True, training=False)

        # reference: the gate-free pipeline with one extra row-softmax on A
        xr = ops.conv_block(x, caa.reduce, False)
        logits = ops.conv2d(x, caa.class_head_w, caa.class_head_b)
        p = ca.ClassAttentionMap(logits, 3)
        aff = ca.class_affinity(xr, p)
        affinity = ops.softmax_axis(aff.affinity, 2)
        probs = ops.reshape(ca.class_probabilities(p), (1, 3, 16))
        context = ops.reshape(ops.bmm(affinity, probs), (1, 2, 4, 4))
        y_ref = ops.conv_block(context, caa.delta, False)
        y_ref = ops.conv_block(ops.add(y_ref, x), caa.rho, False)

        assert np.array_equal(y_gated.data, y_ref.data)

    def test_reduced_width_must_shrink(self):
        rng = np.random.default_rng(24)
        with pytest.raises(ShapeError):
            ca.init_caa(rng, 8, 8, 2)
