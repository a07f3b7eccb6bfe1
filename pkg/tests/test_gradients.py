import unittest
from typing import Callable

import numpy as np

from mlconv import _ops as ops
from mlconv._config import parse_model_config
from mlconv._network import Network


def numeric_grad(f: Callable[[], float], x: np.ndarray,
                 eps: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x)
    for index in np.ndindex(*x.shape):
        saved = x[index]
        x[index] = saved + eps
        plus = f()
        x[index] = saved - eps
        minus = f()
        x[index] = saved
        grad[index] = (plus - minus) / (2 * eps)
    return grad


class GradientCase(unittest.TestCase):
    def assertGradient(self, analytic: np.ndarray, numeric: np.ndarray,
                       rtol: float = 1e-3, atol: float = 1e-7):
        """Elementwise: each entry is within ``rtol`` of the larger
        magnitude, or within ``atol`` absolutely."""
        self.assertEqual(analytic.shape, numeric.shape)
        diff = np.abs(analytic - numeric)
        scale = np.maximum(np.abs(analytic), np.abs(numeric))
        bad = (diff > atol) & (diff > rtol * scale)
        if bad.any():
            worst = np.unravel_index(np.argmax(np.where(bad, diff, 0)),
                                     diff.shape)
            self.fail(f"{int(bad.sum())} of {diff.size} entries differ; "
                      f"at {worst}: analytic {analytic[worst]!r}, "
                      f"numeric {numeric[worst]!r}")

    def setUp(self):
        self.rng = np.random.default_rng(42)


class TestConvolutionGradients(GradientCase):
    def test_conv2d(self):
        x = self.rng.standard_normal((2, 4, 5, 3))
        w = self.rng.standard_normal((3, 3, 3, 2))
        b = self.rng.standard_normal(2)
        proj = self.rng.standard_normal((2, 4, 5, 2))

        def loss():
            return float((ops.conv2d_forward(x, w, b) * proj).sum())

        dx, dw, db = ops.conv2d_backward(x, w, proj)
        self.assertGradient(dx, numeric_grad(loss, x))
        self.assertGradient(dw, numeric_grad(loss, w))
        self.assertGradient(db, numeric_grad(loss, b))

    def test_mlconv_both_schemes(self):
        for scheme in (1, 2):
            with self.subTest(scheme=scheme):
                x = self.rng.standard_normal((2, 4, 4, 3))
                w1 = self.rng.standard_normal((3, 2, 2))
                w2 = self.rng.standard_normal((3, 2, 2))
                w3 = self.rng.standard_normal((3, 2, 2))
                b = self.rng.standard_normal(2)
                proj = self.rng.standard_normal((2, 4, 4, 2))
                forward = ops.mlconv_forward_scheme1 if scheme == 1 \
                    else ops.mlconv_forward_scheme2
                backward = ops.mlconv_backward_scheme1 if scheme == 1 \
                    else ops.mlconv_backward_scheme2

                def loss():
                    return float((forward(x, w1, w2, w3, b) * proj).sum())

                dx, dw1, dw2, dw3, db = backward(x, w1, w2, w3, proj)
                self.assertGradient(dx, numeric_grad(loss, x))
                self.assertGradient(dw1, numeric_grad(loss, w1))
                self.assertGradient(dw2, numeric_grad(loss, w2))
                self.assertGradient(dw3, numeric_grad(loss, w3))
                self.assertGradient(db, numeric_grad(loss, b))

    def test_lrconv(self):
        x = self.rng.standard_normal((2, 5, 4, 2))
        v = self.rng.standard_normal((3, 1, 2, 3))
        hz = self.rng.standard_normal((1, 3, 3, 2))
        b = self.rng.standard_normal(2)
        proj = self.rng.standard_normal((2, 5, 4, 2))

        def loss():
            return float((ops.lrconv_forward(x, v, hz, b) * proj).sum())

        dx, dv, dhz, db = ops.lrconv_backward(x, v, hz, proj)
        self.assertGradient(dx, numeric_grad(loss, x))
        self.assertGradient(dv, numeric_grad(loss, v))
        self.assertGradient(dhz, numeric_grad(loss, hz))
        self.assertGradient(db, numeric_grad(loss, b))


class TestOtherGradients(GradientCase):
    def test_batchnorm_training(self):
        x = self.rng.standard_normal((3, 2, 2, 3)) * 2 + 1
        gamma = self.rng.standard_normal(3)
        beta = self.rng.standard_normal(3)
        proj = self.rng.standard_normal(x.shape)
        stats = (np.zeros(3), np.ones(3))

        def loss():
            y = ops.batchnorm_forward(x, gamma, beta, *stats, True, 1e-3,
                                      0.99)[0]
            return float((y * proj).sum())

        _, cache, _, _ = ops.batchnorm_forward(x, gamma, beta, *stats, True,
                                               1e-3, 0.99)
        dx, dgamma, dbeta = ops.batchnorm_backward(gamma, cache, proj)
        self.assertGradient(dx, numeric_grad(loss, x))
        self.assertGradient(dgamma, numeric_grad(loss, gamma))
        self.assertGradient(dbeta, numeric_grad(loss, beta))

    def test_batchnorm_inference(self):
        x = self.rng.standard_normal((2, 2, 2, 2))
        gamma = self.rng.standard_normal(2)
        proj = self.rng.standard_normal(x.shape)
        stats = (self.rng.standard_normal(2), np.array([0.5, 2.0]))

        def loss():
            y = ops.batchnorm_forward(x, gamma, np.zeros(2), *stats, False,
                                      1e-3, 0.99)[0]
            return float((y * proj).sum())

        _, cache, _, _ = ops.batchnorm_forward(x, gamma, np.zeros(2), *stats,
                                               False, 1e-3, 0.99)
        dx, _, _ = ops.batchnorm_backward(gamma, cache, proj)
        self.assertGradient(dx, numeric_grad(loss, x))

    def test_lrelu(self):
        x = self.rng.standard_normal((2, 3, 3, 2))
        proj = self.rng.standard_normal(x.shape)

        def loss():
            return float((ops.lrelu(x, 0.2) * proj).sum())

        self.assertGradient(ops.lrelu_backward(x, 0.2, proj),
                            numeric_grad(loss, x))

    def test_maxpool(self):
        x = self.rng.standard_normal((2, 4, 4, 2))
        proj = self.rng.standard_normal((2, 2, 2, 2))

        def loss():
            return float((ops.maxpool2x2(x)[0] * proj).sum())

        _, argmax = ops.maxpool2x2(x)
        self.assertGradient(ops.maxpool2x2_backward(argmax, proj),
                            numeric_grad(loss, x))

    def test_global_avg_pool(self):
        x = self.rng.standard_normal((2, 3, 2, 4))
        proj = self.rng.standard_normal((2, 4))

        def loss():
            return float((ops.global_avg_pool(x) * proj).sum())

        self.assertGradient(ops.global_avg_pool_backward(x.shape, proj),
                            numeric_grad(loss, x))

    def test_softmax_xent(self):
        logits = self.rng.standard_normal((4, 5))
        labels = np.array([0, 3, 4, 1])

        def loss():
            return ops.softmax_xent(logits, labels)[0]

        _, probs = ops.softmax_xent(logits, labels)
        self.assertGradient(ops.softmax_xent_backward(probs, labels),
                            numeric_grad(loss, logits))


NETWORK = """
input 4 4 2
classes 3
mlconv 3 4 rank=2 scheme=1
bn
lrelu
maxpool
lrconv 3 4 k=2
lrelu
mlconv 1 4 rank=1 scheme=2
conv 1 classes
gap
softmax
"""


class TestNetworkGradients(GradientCase):
    def test_every_parameter(self):
        network = Network(parse_model_config(NETWORK), dtype=np.float64,
                          seed=3)
        x = self.rng.standard_normal((3, 4, 4, 2))
        labels = np.array([0, 2, 1])

        def loss():
            logits = network.forward(x, training=True)
            return ops.softmax_xent(logits, labels)[0]

        network.loss_and_grads(x, labels)
        analytic = {k: g.copy() for k, g in network.named_grads().items()}
        for key, param in network.named_params().items():
            with self.subTest(param=key):
                self.assertGradient(analytic[key],
                                    numeric_grad(loss, param))

    def test_input_gradient(self):
        network = Network(parse_model_config(NETWORK), dtype=np.float64,
                          seed=4)
        x = self.rng.standard_normal((2, 4, 4, 2))
        labels = np.array([1, 2])

        def loss():
            return ops.softmax_xent(network.forward(x, training=True),
                                    labels)[0]

        logits = network.forward(x, training=True)
        _, probs = ops.softmax_xent(logits, labels)
        dx = network.backward(ops.softmax_xent_backward(probs, labels))
        self.assertGradient(dx, numeric_grad(loss, x))

    def test_bias_before_batchnorm_gets_no_gradient(self):
        network = Network(parse_model_config(NETWORK), dtype=np.float64,
                          seed=5)
        x = self.rng.standard_normal((3, 4, 4, 2))
        network.loss_and_grads(x, np.array([2, 0, 1]))
        bias = network.named_grads()['00.mlconv.b']
        np.testing.assert_allclose(bias, 0.0, atol=1e-12)
        self.assertGradient(bias, np.zeros_like(bias))
