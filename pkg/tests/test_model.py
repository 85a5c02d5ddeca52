"""MLP forward/backward, flattening, and the frozen-classifier contract."""

import numpy as np
import pytest

from feddesk.classifier import build_etf, build_trainable
from feddesk.errors import DimensionError
from feddesk.model import (
    backward_batch,
    flatten,
    flatten_grads,
    forward,
    forward_batch,
    init_mlp,
    unflatten,
)
from feddesk.numerics import RngStream, cosine, softmax


def small_net(seed=0, sizes=(4, 8, 3), n_classes=3):
    cm = build_etf(sizes[-1], n_classes, RngStream(seed).child("cls"))
    return init_mlp(sizes, cm, RngStream(seed).child("net"))


class TestInit:
    def test_parameter_count(self):
        params = small_net()
        assert params.n_extractor_params() == 4 * 8 + 8 + 8 * 3 + 3

    def test_deterministic(self):
        a, b = small_net(5), small_net(5)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_single_size_is_square_layer(self):
        cm = build_etf(2, 2, RngStream(1).child("cls"))
        params = init_mlp((2,), cm, RngStream(1).child("net"))
        assert params.n_layers == 1
        assert params.weights[0].shape == (2, 2)
        x = np.array([0.3, -0.7])
        trace = forward(params, x)
        np.testing.assert_allclose(
            trace.features[0], params.weights[0] @ x + params.biases[0], atol=1e-15
        )

    def test_shape_mismatch(self):
        cm = build_etf(3, 3, RngStream(2).child("cls"))
        with pytest.raises(DimensionError):
            init_mlp((4, 8, 5), cm, RngStream(2).child("net"))

    def test_biases_zero(self):
        params = small_net()
        for b in params.biases:
            np.testing.assert_array_equal(b, 0.0)


class TestForward:
    def test_zero_weights_give_uniform_softmax(self):
        params = small_net()
        for w in params.weights:
            w[:] = 0.0
        trace = forward(params, np.ones(4))
        np.testing.assert_array_equal(trace.features[0], 0.0)
        np.testing.assert_array_equal(trace.logits[0], 0.0)
        np.testing.assert_allclose(softmax(trace.logits[0]), 1.0 / 3.0, atol=1e-15)

    def test_identity_layer_reaches_class_vector(self):
        cm = build_etf(2, 2, RngStream(3).child("cls"))
        params = init_mlp((2, 2), cm, RngStream(3).child("net"))
        params.weights[0][:] = np.eye(2)
        params.biases[0][:] = 0.0
        x = cm.vectors[1].copy()
        trace = forward(params, x)
        assert abs(cosine(trace.features[0], cm.vectors[1]) - 1.0) < 1e-12

    def test_matches_manual_evaluation(self):
        params = small_net(7)
        x = np.array([0.25, -1.5, 2.0, 0.75])
        pre0 = params.weights[0] @ x + params.biases[0]
        act0 = np.maximum(pre0, 0.0)
        feat = params.weights[1] @ act0 + params.biases[1]
        logits = params.classifier.vectors @ feat
        trace = forward(params, x)
        np.testing.assert_allclose(trace.features[0], feat, atol=1e-12)
        np.testing.assert_allclose(trace.logits[0], logits, atol=1e-12)

    def test_logits_consistent_with_recomputation(self):
        params = small_net(8)
        gen = np.random.default_rng(8)
        trace = forward_batch(params, gen.standard_normal((32, 4)))
        np.testing.assert_allclose(
            trace.logits, trace.features @ params.classifier.vectors.T, atol=1e-12
        )

    def test_forward_is_pure(self):
        params = small_net(9)
        x = np.random.default_rng(9).standard_normal(4)
        a = forward(params, x)
        b = forward(params, x)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.logits, b.logits)

    def test_batch_matches_single(self):
        # to roundoff, not bitwise: the numpy fallback's BLAS may pick
        # different kernels for a batch of one
        params = small_net(10)
        X = np.random.default_rng(10).standard_normal((6, 4))
        batch = forward_batch(params, X)
        for i in range(6):
            single = forward(params, X[i])
            np.testing.assert_allclose(single.features[0], batch.features[i], rtol=1e-13)

    def test_input_length_checked(self):
        with pytest.raises(DimensionError):
            forward(small_net(), np.ones(5))


class TestBackward:
    def test_zero_upstream_zero_grads(self):
        params = small_net(11)
        trace = forward(params, np.random.default_rng(11).standard_normal(4))
        grads = backward_batch(params, trace, np.zeros_like(trace.features))
        for g in grads.weights + grads.biases:
            np.testing.assert_array_equal(g, 0.0)

    def test_single_linear_layer_chain_rule(self):
        cm = build_etf(3, 3, RngStream(12).child("cls"))
        params = init_mlp((4, 3), cm, RngStream(12).child("net"))
        gen = np.random.default_rng(12)
        x = gen.standard_normal(4)
        g = gen.standard_normal(3)
        trace = forward(params, x)
        grads = backward_batch(params, trace, g[None, :])
        np.testing.assert_allclose(grads.weights[0], np.outer(g, x), atol=1e-14)
        np.testing.assert_allclose(grads.biases[0], g, atol=1e-14)

    def test_finite_difference_on_feature_functional(self):
        # scalar functional L = a . f(x); dL/dtheta checked by central differences
        params = small_net(13)
        gen = np.random.default_rng(13)
        x = gen.standard_normal(4)
        a = gen.standard_normal(3)
        trace = forward(params, x)
        grads = backward_batch(params, trace, a[None, :])
        flat_grad = flatten_grads(params, grads)
        theta = flatten(params)
        h = 1e-6
        for i in range(0, theta.size, 7):
            up, down = theta.copy(), theta.copy()
            up[i] += h
            down[i] -= h
            f_up = forward(unflatten(up, params), x).features[0]
            f_down = forward(unflatten(down, params), x).features[0]
            numeric = float(a @ (f_up - f_down)) / (2 * h)
            assert abs(numeric - flat_grad[i]) < 1e-4 * max(1.0, abs(numeric))

    def test_trainable_classifier_grad(self):
        cm = build_trainable(3, 4, RngStream(14).child("cls"))
        params = init_mlp((4, 3), cm, RngStream(14).child("net"))
        gen = np.random.default_rng(14)
        x = gen.standard_normal(4)
        dlogits = gen.standard_normal(4)
        trace = forward(params, x)
        grads = backward_batch(params, trace, np.zeros((1, 3)), dlogits[None, :])
        np.testing.assert_allclose(
            grads.classifier, np.outer(dlogits, trace.features[0]), atol=1e-14
        )

    def test_frozen_classifier_untouched(self):
        params = small_net(15)
        before = params.classifier.vectors.copy()
        trace = forward(params, np.random.default_rng(15).standard_normal(4))
        grads = backward_batch(params, trace, np.ones((1, 3)), np.ones((1, 3)))
        assert grads.classifier is None
        np.testing.assert_array_equal(params.classifier.vectors, before)


class TestFlatten:
    def test_roundtrip_from_params(self):
        params = small_net(16)
        rebuilt = unflatten(flatten(params), params)
        for a, b in zip(params.weights, rebuilt.weights):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(params.biases, rebuilt.biases):
            np.testing.assert_array_equal(a, b)

    def test_roundtrip_from_vector(self):
        params = small_net(17)
        vec = np.random.default_rng(17).standard_normal(params.n_extractor_params())
        np.testing.assert_array_equal(flatten(unflatten(vec, params)), vec)

    def test_frozen_classifier_excluded(self):
        params = small_net(18)
        assert flatten(params).size == params.n_extractor_params()

    def test_trainable_classifier_included(self):
        cm = build_trainable(3, 4, RngStream(19).child("cls"))
        params = init_mlp((4, 3), cm, RngStream(19).child("net"))
        assert flatten(params).size == params.n_extractor_params() + 12

    def test_wrong_length_rejected(self):
        params = small_net(20)
        with pytest.raises(DimensionError):
            unflatten(np.zeros(params.n_extractor_params() + 1), params)
