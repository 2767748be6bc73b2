import math

import numpy as np
import pytest

from segattn import scenes, training
from segattn.errors import DivergenceError, LabelError, ShapeError
from segattn.network import (LossWeights, cross_entropy_loss, downsample_labels,
                             init_net, net_forward, poly_lr, total_loss)
from segattn.params import named_parameters
from segattn.tensor import Tensor

from oracles import cross_entropy_oracle


def small_net(seed=0, k=3, grid=(2, 2)):
    rng = np.random.default_rng(seed)
    return init_net(rng, num_classes=k, grid=grid, cca_ratio=3)


class TestForward:
    def test_logit_shape_contract(self):
        rng = np.random.default_rng(70)
        net = init_net(rng, num_classes=6, grid=(8, 8), cca_ratio=5)
        img = Tensor(rng.normal(size=(2, 3, 64, 64)))
        out = net_forward(img, net)
        assert out.logits.dims == (2, 6, 64, 64)
        assert out.aux_logits.dims == (2, 6, 64, 64)
        assert out.class_attention.logits.dims == (2, 6, 8, 8)

    def test_zero_image_stays_finite(self):
        net = small_net()
        out = net_forward(Tensor(np.zeros((1, 3, 16, 16))), net)
        assert np.isfinite(out.logits.data).all()

    def test_geometry_must_divide(self):
        net = small_net()
        with pytest.raises(ShapeError):
            net_forward(Tensor(np.zeros((1, 3, 20, 20))), net)

    def test_branch_zeroing_keeps_shapes(self):
        rng = np.random.default_rng(71)
        net = small_net()
        img = Tensor(rng.normal(size=(1, 3, 16, 16)))
        for zc, zr in ((True, False), (False, True), (True, True)):
            out = net_forward(img, net, zero_caa=zc, zero_rsa=zr)
            assert out.logits.dims == (1, 3, 16, 16)
            assert np.isfinite(out.logits.data).all()


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = Tensor(np.zeros((2, 6, 4, 4)))
        labels = np.zeros((2, 4, 4), dtype=int)
        assert cross_entropy_loss(logits, labels).item() == pytest.approx(math.log(6), rel=1e-12)

    def test_peaked_logits_vanish(self):
        logits = np.zeros((1, 3, 2, 2))
        labels = np.ones((1, 2, 2), dtype=int)
        logits[0, 1] = 50.0
        assert cross_entropy_loss(Tensor(logits), labels).item() < 1e-12

    def test_matches_double_sum_oracle(self):
        rng = np.random.default_rng(72)
        logits = Tensor(rng.normal(0, 2, (2, 5, 3, 3)))
        labels = rng.integers(0, 5, (2, 3, 3))
        got = cross_entropy_loss(logits, labels).item()
        want = cross_entropy_oracle(logits.data, labels)
        assert got == pytest.approx(want, rel=1e-13)

    def test_out_of_range_label(self):
        with pytest.raises(LabelError):
            cross_entropy_loss(Tensor(np.zeros((1, 3, 2, 2))), np.full((1, 2, 2), 3))


class TestTotalLoss:
    def test_unit_losses_default_weights(self):
        one = Tensor(np.array([1.0]))
        assert total_loss(one, one, one, LossWeights()).item() == pytest.approx(1.9, abs=1e-15)

    def test_disabled_terms(self):
        main = Tensor(np.array([0.8]))
        zero = Tensor(np.array([123.0]))
        out = total_loss(main, zero, zero, LossWeights(1.0, 0.0, 0.0))
        assert out.item() == pytest.approx(0.8, abs=1e-15)

    def test_hand_arithmetic(self):
        vals = [Tensor(np.array([v])) for v in (0.7, 0.9, 1.1)]
        out = total_loss(*vals, LossWeights())
        assert out.item() == pytest.approx(1.59, abs=1e-14)

    def test_exactly_matches_weighted_sum(self):
        rng = np.random.default_rng(73)
        a, b, c = (Tensor(rng.uniform(0, 3, 1)) for _ in range(3))
        w = LossWeights(1.0, 0.5, 0.4)
        got = total_loss(a, b, c, w).item()
        want = (w.lam_ce * a.item() + w.lam_cls * b.item()) + w.lam_aux * c.item()
        assert got == want

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 0.5, 0.4)


class TestPolyLr:
    def test_endpoints(self):
        assert poly_lr(0, 100, 0.01) == 0.01
        assert poly_lr(100, 100, 0.01) == 0.0

    def test_midpoint_value(self):
        assert poly_lr(50, 100, 0.01, 0.9) == pytest.approx(0.0046411320, abs=1e-9)

    def test_range_check(self):
        with pytest.raises(ValueError):
            poly_lr(101, 100, 0.01)


class TestTraining:
    @staticmethod
    def _batch(rng, n=2, hw=16, k=3):
        img = Tensor(rng.normal(size=(n, 3, hw, hw)))
        labels = rng.integers(0, k, (n, hw, hw))
        return img, labels

    def test_zero_lr_keeps_parameters(self):
        rng = np.random.default_rng(74)
        net = small_net()
        img, labels = self._batch(rng)
        before = [t.data.copy() for _, t in named_parameters(net)]
        training.train_step(net, training.SgdOptimizer(), img, labels, lr=0.0)
        after = [t.data for _, t in named_parameters(net)]
        assert all(np.array_equal(a, b) for a, b in zip(before, after))

    def test_identical_steps_are_deterministic(self):
        rng = np.random.default_rng(75)
        img, labels = self._batch(rng)
        outs = []
        for _ in range(2):
            net = small_net(seed=7)
            opt = training.SgdOptimizer()
            losses = training.train_step(net, opt, img, labels, lr=0.01)
            outs.append((losses["total"], [t.data.copy() for _, t in named_parameters(net)]))
        assert outs[0][0] == outs[1][0]
        assert all(np.array_equal(a, b) for a, b in zip(outs[0][1], outs[1][1]))

    def test_divergence_raises(self):
        rng = np.random.default_rng(76)
        net = small_net()
        net.classifier_w.data[:] = np.inf
        img, labels = self._batch(rng)
        with np.errstate(invalid="ignore", over="ignore"), pytest.raises(DivergenceError):
            training.train_step(net, training.SgdOptimizer(), img, labels, lr=0.01)

    def test_overfit_one_batch(self):
        # 200 full-rate steps on one fixed 16x16 batch must cut the loss 10x.
        # Labels are constant per stride-8 cell so the upsampled logits can
        # represent them exactly and the loss floor is optimization, not
        # output-stride resolution.
        rng = np.random.default_rng(77)
        net = small_net(seed=3)
        img = Tensor(scenes.generate_scene(0, 32, 32).image.data[None].astype(np.float64)
                     [:, :, ::2, ::2])
        coarse = scenes.generate_scene(0, 32, 32).labels[::16, ::16] % 3
        labels = np.kron(coarse, np.ones((8, 8), dtype=int))[None]
        opt = training.SgdOptimizer()
        initial = training.train_step(net, opt, img, labels, lr=0.01)["total"]
        final = initial
        for _ in range(200):
            final = training.train_step(net, opt, img, labels, lr=0.01)["total"]
        assert final < 0.1 * initial, (initial, final)

    def test_label_downsampling_is_nearest(self):
        labels = np.arange(64).reshape(1, 8, 8)
        ds = downsample_labels(labels, 4)
        assert np.array_equal(ds, labels[:, ::4, ::4])


class TestEvaluateAndCheckpoint:
    def test_evaluation_deterministic(self):
        rng = np.random.default_rng(78)
        net = small_net(seed=1, k=6, grid=(4, 4))
        data = [scenes.generate_scene(s, 32, 32) for s in range(4)]
        images = [s.image.astype("f64") for s in data]
        labels = [s.labels for s in data]
        a = training.evaluate_model(net, images, labels)
        b = training.evaluate_model(net, images, labels)
        assert a.to_csv() == b.to_csv()

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            training.evaluate_model(small_net(), [], [])

    def test_prediction_ties_break_to_lowest_class(self):
        net = small_net(seed=2)
        # zero out every classifier path so logits tie at the bias values
        for _, t in named_parameters(net):
            t.data[:] = 0.0
        img = Tensor(np.zeros((3, 16, 16)))
        pred = training.predict(net, img)
        assert (pred == 0).all()

    def test_checkpoint_round_trip(self, tmp_path):
        net = small_net(seed=5)
        training.save_checkpoint(tmp_path / "ck", net, iteration=10, seed=5,
                                 config_echo="classes = 3\n")
        other = small_net(seed=99)
        training.load_checkpoint(tmp_path / "ck", other)
        for (_, a), (_, b) in zip(named_parameters(net), named_parameters(other)):
            assert np.array_equal(a.data, b.data)
        meta = (tmp_path / "ck" / "checkpoint.txt").read_text()
        assert "iteration = 10" in meta and "classes = 3" in meta
