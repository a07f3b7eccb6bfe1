import unittest

import numpy as np

from mlconv import MlconvError, TensorShapeError
from mlconv._constants import SC1, SC2
from mlconv._layers import Conv2D, LRConv2D, MLConv2D
from mlconv._optim import Adam, OptimizerState, SGDMomentum, adam_step, \
    apply_max_norm, apply_weight_decay, filter_norms, named_schedule, \
    optimizer_step, schedule_lr, sgd_momentum_step


class TestSgdMomentum(unittest.TestCase):
    def test_plain_sgd(self):
        p = {'w': np.array([1.0])}
        sgd_momentum_step(p, {'w': np.array([2.0])}, OptimizerState(), 0.1,
                          0.0)
        np.testing.assert_allclose(p['w'], [0.8])

    def test_two_momentum_steps(self):
        p = {'w': np.array([0.0])}
        g = {'w': np.array([1.0])}
        state = OptimizerState()
        sgd_momentum_step(p, g, state, 0.1, 0.9)
        np.testing.assert_allclose(state.first['w'], [1.0])
        np.testing.assert_allclose(p['w'], [-0.1])
        sgd_momentum_step(p, g, state, 0.1, 0.9)
        np.testing.assert_allclose(state.first['w'], [1.9])
        np.testing.assert_allclose(p['w'], [-0.29])
        self.assertEqual(state.step, 2)

    def test_zero_gradient_decays_velocity(self):
        p = {'w': np.array([0.0])}
        state = OptimizerState()
        sgd_momentum_step(p, {'w': np.array([1.0])}, state, 0.0, 0.9)
        np.testing.assert_array_equal(p['w'], [0.0])
        sgd_momentum_step(p, {'w': np.array([0.0])}, state, 0.0, 0.9)
        np.testing.assert_allclose(state.first['w'], [0.9])

    def test_shape_mismatch(self):
        with self.assertRaises(TensorShapeError):
            sgd_momentum_step({'w': np.zeros(2)}, {'w': np.zeros(3)},
                              OptimizerState(), 0.1, 0.9)


class TestAdam(unittest.TestCase):
    def test_first_step_is_signed_lr(self):
        p = {'w': np.array([0.0, 0.0, 0.0])}
        g = {'w': np.array([3.0, -0.5, 100.0])}
        adam_step(p, g, OptimizerState(), 0.01, 0.9, 0.999, 1e-8)
        np.testing.assert_allclose(p['w'], [-0.01, 0.01, -0.01], rtol=1e-6)

    def test_zero_gradient(self):
        p = {'w': np.array([1.5])}
        adam_step(p, {'w': np.array([0.0])}, OptimizerState(), 0.01, 0.9,
                  0.999, 1e-8)
        np.testing.assert_array_equal(p['w'], [1.5])

    def test_two_steps_against_hand_recursion(self):
        p = {'w': np.array([0.0])}
        g = {'w': np.array([2.0])}
        state = OptimizerState()
        b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.1
        expected, m, v = 0.0, 0.0, 0.0
        for t in (1, 2):
            adam_step(p, g, state, lr, b1, b2, eps)
            m = b1 * m + (1 - b1) * 2.0
            v = b2 * v + (1 - b2) * 4.0
            expected -= lr * (m / (1 - b1 ** t)) / (
                    np.sqrt(v / (1 - b2 ** t)) + eps)
        np.testing.assert_allclose(p['w'], [expected], rtol=1e-12)


class TestQuadraticBowl(unittest.TestCase):
    def test_both_optimizers_reduce_loss(self):
        target = np.array([1.0, -2.0, 0.5])
        for optimizer in (SGDMomentum(), Adam()):
            p = {'w': np.zeros(3)}
            before = float(((p['w'] - target) ** 2).sum())
            optimizer_step(optimizer, p, {'w': 2 * (p['w'] - target)},
                           OptimizerState(), 0.01)
            after = float(((p['w'] - target) ** 2).sum())
            self.assertLess(after, before)


class TestWeightDecay(unittest.TestCase):
    def test_values(self):
        params = {'w': np.array([2.0]), 'b': np.array([2.0])}
        grads = {'w': np.array([0.0]), 'b': np.array([0.0])}
        decayed = apply_weight_decay(params, grads, 0.001, keys=['w'])
        np.testing.assert_allclose(decayed['w'], [0.002])
        np.testing.assert_array_equal(decayed['b'], [0.0])
        np.testing.assert_array_equal(
            apply_weight_decay(params, grads, 0.0)['w'], [0.0])

    def test_is_derivative_of_half_squared_norm(self):
        w = np.array([0.3, -1.2])
        lam, eps = 0.05, 1e-6
        decayed = apply_weight_decay({'w': w}, {'w': np.zeros(2)}, lam)
        for i in range(2):
            step = np.zeros(2)
            step[i] = eps
            numeric = (lam / 2 * ((w + step) ** 2).sum()
                       - lam / 2 * ((w - step) ** 2).sum()) / (2 * eps)
            self.assertAlmostEqual(decayed['w'][i], numeric, places=8)

    def test_negative(self):
        with self.assertRaises(MlconvError):
            apply_weight_decay({}, {}, -1.0)


class TestMaxNorm(unittest.TestCase):
    def test_long_filter_is_scaled(self):
        layer = Conv2D(1, 1, 2, dtype=np.float64)
        layer.params['w'][0, 0, 0] = [10.0, 1.0]
        apply_max_norm(layer, 2.0)
        np.testing.assert_allclose(layer.params['w'][0, 0, 0], [2.0, 1.0])

    def test_mlconv_filter_is_concatenated_factors(self):
        layer = MLConv2D(3, 4, 5, rank=2, dtype=np.float64)
        layer.init_params(np.random.default_rng(0))
        for name in layer.weight_names:
            layer.params[name] *= 10
        apply_max_norm(layer, 1.5)
        (norms,) = filter_norms(layer)
        np.testing.assert_allclose(norms, 1.5)
        squares = sum((layer.params[k][:, 0, :] ** 2).sum()
                      for k in ('w1', 'w2', 'w3'))
        self.assertAlmostEqual(float(np.sqrt(squares)), 1.5)

    def test_lrconv_groups_are_separate(self):
        layer = LRConv2D(3, 2, 4, k=3, dtype=np.float64)
        layer.init_params(np.random.default_rng(1))
        layer.params['v'] *= 100
        apply_max_norm(layer, 1.0)
        v_norms, h_norms = filter_norms(layer)
        self.assertEqual(v_norms.shape, (3,))
        self.assertEqual(h_norms.shape, (4,))
        self.assertTrue(np.all(v_norms <= 1.0 + 1e-9))

    def test_bad_radius(self):
        with self.assertRaises(MlconvError):
            apply_max_norm(Conv2D(1, 1, 1), 0.0)


class TestSchedule(unittest.TestCase):
    def test_sc2(self):
        schedule = named_schedule('sc2', 40)
        self.assertEqual(schedule_lr(schedule, 0), 0.01)
        self.assertEqual(schedule_lr(schedule, 39), 0.01)
        self.assertEqual(schedule_lr(schedule, 40), 0.001)
        self.assertEqual(schedule_lr(schedule, 10 ** 6), 0.0001)

    def test_sc1_steps(self):
        schedule = named_schedule('SC1', 2)
        self.assertEqual([schedule_lr(schedule, e) for e in range(0, 10, 2)],
                         list(SC1))
        self.assertEqual(len(named_schedule('sc2', 5)), len(SC2))

    def test_errors(self):
        with self.assertRaises(MlconvError):
            schedule_lr([], 0)
        with self.assertRaises(MlconvError):
            schedule_lr(named_schedule('sc2', 1), -1)
        with self.assertRaises(MlconvError):
            named_schedule('sc3', 1)
