import json
import math

import numpy as np
import pytest

import spanprobe as sp
from spanprobe.linalg import row_space, project
from spanprobe.network import (
    Activation,
    BoundaryPointError,
    HeadKind,
    Layer,
    Network,
    OutputHead,
    TrainConfig,
    UnsupportedVersionError,
    WeightFormatError,
    accuracy,
    he_scaled,
    softmax_loss,
)


def tiny_relu_net():
    """w = (1), A = [1, -1], single ReLU layer, linear head."""
    return Network(
        2,
        (Layer(np.array([[1.0, -1.0]]), Activation.RELU),),
        OutputHead(HeadKind.LINEAR, np.array([[1.0]])),
    )


def reference_forward(net, x):
    """Independent straight-line evaluator used as the oracle for eval."""
    h = np.asarray(x, dtype=float)
    for layer in net.layers:
        z = layer.weight @ h
        if layer.activation is Activation.RELU:
            h = np.where(z > 0, z, 0.0)
        elif layer.activation is Activation.TANH:
            h = np.tanh(z)
        elif layer.activation is Activation.SIGMOID:
            h = 1.0 / (1.0 + np.exp(-z)) - 0.5
        elif layer.activation is Activation.SOFTPLUS:
            h = np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0) - math.log(2.0)
        else:
            h = z
    out = net.head.weight @ h
    if net.head.bias is not None:
        out = out + net.head.bias
    return out


class TestEvaluate:
    def test_tiny_net_active(self):
        assert sp.evaluate(tiny_relu_net(), [2.0, 1.0]) == 1.0

    def test_tiny_net_dead(self):
        assert sp.evaluate(tiny_relu_net(), [1.0, 2.0]) == 0.0

    @pytest.mark.parametrize("activation", list(Activation))
    def test_matches_reference_evaluator(self, activation):
        net = sp.random_network(12, 4, [5, 3], activation=activation, seed=9)
        rng = np.random.default_rng(9)
        for _ in range(50):
            x = rng.standard_normal(12)
            got = sp.evaluate(net, x)
            want = reference_forward(net, x)[0]
            assert got == pytest.approx(want, rel=1e-12, abs=1e-12)

    def test_threshold_head_is_binary(self):
        net = sp.random_network(10, 3, [4], activation=Activation.TANH,
                                head=HeadKind.THRESHOLD, seed=2)
        rng = np.random.default_rng(2)
        vals = {sp.evaluate(net, rng.standard_normal(10)) for _ in range(40)}
        assert vals <= {0.0, 1.0}

    def test_softmax_head_sums_to_one(self):
        net = sp.random_network(10, 3, [4], head=HeadKind.SOFTMAX, seed=3, classes=7)
        rng = np.random.default_rng(3)
        for _ in range(20):
            probs = sp.evaluate(net, rng.standard_normal(10))
            assert probs.shape == (7,)
            assert abs(probs.sum() - 1.0) <= 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sp.evaluate(tiny_relu_net(), [1.0, 2.0, 3.0])


class TestAnalyticGradient:
    def test_tiny_net_active_region(self):
        np.testing.assert_allclose(
            sp.analytic_gradient(tiny_relu_net(), [2.0, 1.0]), [1.0, -1.0]
        )

    def test_tiny_net_dead_region(self):
        np.testing.assert_allclose(
            sp.analytic_gradient(tiny_relu_net(), [1.0, 2.0]), [0.0, 0.0]
        )

    def test_boundary_point_flagged(self):
        with pytest.raises(BoundaryPointError):
            sp.analytic_gradient(tiny_relu_net(), [1.0, 1.0])

    @pytest.mark.parametrize("activation",
                             [Activation.TANH, Activation.SIGMOID, Activation.SOFTPLUS])
    def test_smooth_net_matches_central_differences(self, activation):
        net = sp.random_network(8, 3, [5, 4], activation=activation, seed=4)
        rng = np.random.default_rng(4)
        for _ in range(5):
            x = rng.standard_normal(8)
            grad = sp.analytic_gradient(net, x)
            fd = np.empty(8)
            for i in range(8):
                e = np.zeros(8)
                e[i] = 1e-6
                fd[i] = (sp.evaluate(net, x + e) - sp.evaluate(net, x - e)) / 2e-6
            np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)

    def test_threshold_head_rejected(self):
        net = sp.random_network(10, 3, [4], head=HeadKind.THRESHOLD, seed=5)
        with pytest.raises(ValueError):
            sp.analytic_gradient(net, np.ones(10))

    def test_softmax_logit_gradient_in_row_span(self):
        net = sp.random_network(20, 6, [8], head=HeadKind.SOFTMAX, seed=6)
        rs = row_space(net.inner_weights)
        g = sp.analytic_gradient(net, np.random.default_rng(6).standard_normal(20),
                                 logit_index=2)
        assert np.linalg.norm(g - project(rs, g)) <= 1e-8 * np.linalg.norm(g)


class TestSignPatterns:
    def test_tiny_patterns(self):
        net = tiny_relu_net()
        assert sp.sign_patterns(net, [2.0, 1.0])[0].tolist() == [1]
        assert sp.sign_patterns(net, [1.0, 2.0])[0].tolist() == [0]

    def test_matches_recomputed_activations(self):
        net = sp.random_network(15, 5, [6, 4], seed=7)
        rng = np.random.default_rng(7)
        x = rng.standard_normal(15)
        pats = sp.sign_patterns(net, x)
        h = x
        for layer, pat in zip(net.layers, pats):
            h = np.maximum(layer.weight @ h, 0.0)
            np.testing.assert_array_equal(pat, (h > 0).astype(np.uint8))

    def test_only_relu_layers_reported(self):
        net = sp.random_network(10, 3, [4], activation=Activation.TANH, seed=8)
        assert sp.sign_patterns(net, np.ones(10)) == []


class TestRandomNetwork:
    def test_inner_matrix_full_rank(self):
        net = sp.random_network(100, 20, [10, 5], seed=7)
        assert net.inner_weights.shape == (20, 100)
        assert sp.numerical_rank(net.inner_weights).rank == 20

    def test_same_seed_bitwise_identical(self):
        a = sp.random_network(30, 5, [6, 4], seed=42)
        b = sp.random_network(30, 5, [6, 4], seed=42)
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.weight, lb.weight)
        assert np.array_equal(a.head.weight, b.head.weight)

    def test_paper_scale_architecture_shape(self):
        net = sp.random_network(784, 80, [40, 30, 20, 10], seed=1)
        assert net.inner_weights.shape == (80, 784)
        assert [l.weight.shape[0] for l in net.layers] == [80, 40, 30, 20, 10]

    def test_k_must_be_below_n(self):
        with pytest.raises(ValueError):
            sp.random_network(10, 10, [4], seed=0)

    def test_weights_standard_gaussian(self):
        net = sp.random_network(200, 40, [30], seed=11)
        a = net.inner_weights.ravel()
        assert abs(a.mean()) < 0.02 and abs(a.std() - 1.0) < 0.02


class TestNetworkInvariants:
    def test_gradient_in_row_span(self):
        for seed in range(5):
            net = sp.random_network(25, 6, [7, 5], seed=seed)
            rs = row_space(net.inner_weights)
            rng = np.random.default_rng(seed)
            for _ in range(10):
                try:
                    g = sp.analytic_gradient(net, rng.standard_normal(25))
                except BoundaryPointError:
                    continue
                if np.linalg.norm(g) == 0:
                    continue
                assert np.linalg.norm(g - project(rs, g)) <= 1e-8 * np.linalg.norm(g)

    def test_affine_on_shared_sign_pattern(self):
        net = sp.random_network(12, 4, [5], seed=13)
        rng = np.random.default_rng(13)
        checked = 0
        while checked < 10:
            x = rng.standard_normal(12)
            y = x + 0.01 * rng.standard_normal(12)
            same = all(
                np.array_equal(p, q)
                for p, q in zip(sp.sign_patterns(net, x), sp.sign_patterns(net, y))
            )
            if not same:
                continue
            mid = sp.evaluate(net, (x + y) / 2.0)
            want = (sp.evaluate(net, x) + sp.evaluate(net, y)) / 2.0
            assert mid == pytest.approx(want, rel=1e-9, abs=1e-12)
            checked += 1

    def test_gradient_locally_constant(self):
        net = sp.random_network(12, 4, [5], seed=14)
        rng = np.random.default_rng(14)
        x = rng.standard_normal(12)
        g = sp.analytic_gradient(net, x)
        g2 = sp.analytic_gradient(net, x + 1e-9 * g)
        np.testing.assert_array_equal(g, g2)

    @pytest.mark.parametrize("activation", list(Activation))
    def test_all_activations_vanish_at_zero(self, activation):
        assert float(activation.apply(np.array(0.0))) == 0.0


class TestTrainer:
    def make_separable(self, m=60, seed=0):
        rng = np.random.default_rng(seed)
        half = m // 2
        x0 = rng.normal([2.0, 2.0], 0.4, size=(half, 2))
        x1 = rng.normal([-2.0, -2.0], 0.4, size=(half, 2))
        x = np.vstack([x0, x1])
        y = np.array([0] * half + [1] * half)
        return x, y

    def net(self, seed=0):
        return sp.random_network(2, 1, [8], head=HeadKind.SOFTMAX, seed=seed, classes=2)

    def test_separable_toy_reaches_full_accuracy(self):
        x, y = self.make_separable()
        net = he_scaled(self.net())
        trained = sp.train_softmax(net, x, y, TrainConfig(0.2, 30, 200, seed=0))
        assert accuracy(trained, x, y) == 1.0

    def test_zero_learning_rate_keeps_weights(self):
        x, y = self.make_separable()
        net = self.net()
        trained = sp.train_softmax(net, x, y, TrainConfig(0.0, 16, 3, seed=1))
        for la, lb in zip(net.layers, trained.layers):
            assert np.array_equal(la.weight, lb.weight)
        assert np.array_equal(net.head.weight, trained.head.weight)

    def test_loss_non_increasing_with_full_batches(self):
        x, y = self.make_separable(m=24, seed=2)
        cur = he_scaled(self.net(seed=2))
        losses = [softmax_loss(cur, x, y)]
        for epoch in range(30):
            cur = sp.train_softmax(cur, x, y, TrainConfig(0.01, 24, 1, seed=epoch))
            losses.append(softmax_loss(cur, x, y))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_shape_mismatch(self):
        net = self.net()
        with pytest.raises(ValueError):
            sp.train_softmax(net, np.ones((4, 3)), np.zeros(4, dtype=int),
                             TrainConfig(0.1, 2, 1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(-0.1, 2, 1)
        with pytest.raises(ValueError):
            TrainConfig(0.1, 0, 1)


class TestWeightFiles:
    def test_round_trip_bitwise(self, tmp_path):
        net = sp.random_network(17, 4, [6, 3], activation=Activation.TANH, seed=21)
        path = tmp_path / "net.spnw"
        sp.save(net, path)
        back = sp.load(path)
        assert back.input_dim == 17
        for la, lb in zip(net.layers, back.layers):
            assert np.array_equal(la.weight, lb.weight)
            assert la.activation is lb.activation
        assert np.array_equal(net.head.weight, back.head.weight)

    def test_softmax_bias_round_trip(self, tmp_path):
        net = sp.random_network(10, 3, [4], head=HeadKind.SOFTMAX, seed=22)
        path = tmp_path / "net.spnw"
        sp.save(net, path)
        back = sp.load(path)
        assert np.array_equal(net.head.bias, back.head.bias)

    def test_truncated_file_is_parse_error(self, tmp_path):
        net = sp.random_network(10, 3, [4], seed=23)
        path = tmp_path / "net.spnw"
        sp.save(net, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(WeightFormatError, match="byte"):
            sp.load(path)

    def test_version_mismatch(self, tmp_path):
        net = sp.random_network(10, 3, [4], seed=24)
        path = tmp_path / "net.spnw"
        sp.save(net, path)
        doc = json.loads(path.read_text())
        doc["version"] = 9
        path.write_text(json.dumps(doc))
        with pytest.raises(UnsupportedVersionError):
            sp.load(path)

    def test_dimension_chain_error_names_layer(self, tmp_path):
        net = sp.random_network(10, 3, [4, 2], seed=25)
        path = tmp_path / "net.spnw"
        sp.save(net, path)
        doc = json.loads(path.read_text())
        doc["layers"][1]["cols"] = 7
        doc["layers"][1]["weights"] = [0.5] * (doc["layers"][1]["rows"] * 7)
        path.write_text(json.dumps(doc))
        with pytest.raises(WeightFormatError, match="layer 1"):
            sp.load(path)

    def test_weight_count_mismatch(self, tmp_path):
        net = sp.random_network(10, 3, [4], seed=26)
        path = tmp_path / "net.spnw"
        sp.save(net, path)
        doc = json.loads(path.read_text())
        doc["layers"][0]["weights"] = doc["layers"][0]["weights"][:-1]
        path.write_text(json.dumps(doc))
        with pytest.raises(WeightFormatError, match="layer 0"):
            sp.load(path)


class TestHeadValidation:
    def test_bias_rejected_off_softmax(self):
        with pytest.raises(ValueError):
            OutputHead(HeadKind.LINEAR, np.ones((1, 3)), bias=np.zeros(1))

    def test_head_width_must_chain(self):
        with pytest.raises(ValueError):
            Network(
                4,
                (Layer(np.ones((2, 4)), Activation.RELU),),
                OutputHead(HeadKind.LINEAR, np.ones((1, 3))),
            )
