import math
import unittest

import numpy as np

from mlconv import ConfigError, TensorShapeError, TrainingDiverged
from mlconv._config import parse_model_config
from mlconv._datasets import Dataset
from mlconv._network import Network
from mlconv._optim import Adam, SGDMomentum, filter_norms
from mlconv._training import Augmentation, EpochMetrics, TrainConfig, \
    build_network, evaluate, median_final_error, metrics_csv, train

TINY = """
input 4 4 1
classes 2
mlconv 3 4 rank=1
lrelu
conv 1 classes
gap
softmax
"""


def separable(count: int, seed: int) -> Dataset:
    """Dark images are class 0, bright ones class 1."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=count)
    low = np.where(labels == 1, 0.6, 0.0)
    images = low[:, None, None, None] + 0.4 * rng.random((count, 4, 4, 1))
    return Dataset(images.astype(np.float32), labels.astype(np.int64), 2)


class TestTrainConfig(unittest.TestCase):
    def test_rates_must_decrease(self):
        with self.assertRaises(ConfigError):
            TrainConfig(schedule=((0.01, 5), (0.01, 5)))
        with self.assertRaises(ConfigError):
            TrainConfig(schedule=((0.001, 5), (0.01, 5)))

    def test_batch_size(self):
        with self.assertRaises(ConfigError):
            TrainConfig(batch_size=0)

    def test_other_ranges(self):
        for kwargs in ({'schedule': ()}, {'max_norm': 0.0},
                       {'dropout_input': 1.0}, {'weight_decay': -1.0},
                       {'augmentation': Augmentation(max_translate=-1)}):
            with self.subTest(**{k: str(v) for k, v in kwargs.items()}):
                with self.assertRaises(ConfigError):
                    TrainConfig(**kwargs)  # type: ignore

    def test_describe_lists_every_setting(self):
        keys = [k for k, _ in TrainConfig(optimizer=Adam()).describe()]
        self.assertIn('optimizer', keys)
        self.assertIn('schedule', keys)
        self.assertEqual(len(keys), len(set(keys)))


class TestTrain(unittest.TestCase):
    def setUp(self):
        self.config = parse_model_config(TINY)
        self.data = separable(200, seed=0)

    def test_learns_separable_data(self):
        settings = TrainConfig(optimizer=Adam(), schedule=((0.01, 20),),
                               batch_size=20, max_epochs=20, seed=1,
                               record_time=False)
        network = build_network(self.config, settings)
        rows = train(network, self.data, None, settings)
        self.assertEqual(len(rows), 20)
        self.assertLess(rows[-1].train_loss, rows[0].train_loss)
        self.assertGreaterEqual(1 - evaluate(network, self.data).error, 0.99)

    def test_zero_learning_rate_keeps_parameters(self):
        settings = TrainConfig(optimizer=SGDMomentum(),
                               schedule=((0.0, 1),), batch_size=50,
                               max_epochs=1)
        network = build_network(self.config, settings)
        before = {k: v.copy() for k, v in network.named_params().items()}
        train(network, self.data, None, settings)
        for key, value in network.named_params().items():
            np.testing.assert_array_equal(value, before[key])

    def test_same_seed_same_log(self):
        settings = TrainConfig(optimizer=Adam(), schedule=((0.01, 3),),
                               batch_size=32, max_epochs=3, seed=9,
                               dropout_input=0.1,
                               augmentation=Augmentation(True, 1),
                               record_time=False)
        logs = []
        for _ in range(2):
            network = build_network(self.config, settings)
            logs.append(metrics_csv(train(network, self.data, self.data,
                                          settings)))
        self.assertEqual(logs[0], logs[1])
        self.assertTrue(logs[0].startswith(
            "epoch,lr,train_loss,train_err,test_err,wall_seconds\n"))
        self.assertIn(",0.000\n", logs[0])

    def test_max_norm_holds_after_every_step(self):
        settings = TrainConfig(optimizer=SGDMomentum(),
                               schedule=((0.1, 2),), batch_size=25,
                               max_epochs=2, max_norm=0.5)
        network = build_network(self.config, settings)
        checked = []

        def check(epoch, step, net):
            for _, layer in net.conv_layers():
                for norms in filter_norms(layer):
                    self.assertTrue(np.all(norms <= 0.5 + 1e-6))
            checked.append(step)

        train(network, self.data, None, settings, on_step=check)
        self.assertEqual(len(checked), 16)

    def test_nan_loss_aborts(self):
        images = np.array(self.data.images)
        images[3] = np.nan
        broken = Dataset(images, np.array(self.data.labels), 2)
        settings = TrainConfig(schedule=((0.01, 1),), batch_size=200,
                               max_epochs=1)
        with self.assertRaises(TrainingDiverged) as ctx:
            train(build_network(self.config, settings), broken, None,
                  settings)
        self.assertEqual(ctx.exception.epoch, 0)
        self.assertEqual(ctx.exception.step, 0)

    def test_zero_epochs(self):
        settings = TrainConfig(max_epochs=0)
        self.assertEqual(train(build_network(self.config, settings),
                               self.data, None, settings), [])

    def test_class_count_mismatch(self):
        three = Dataset(np.zeros((3, 4, 4, 1), np.float32),
                        np.array([0, 1, 2]), 3)
        with self.assertRaises(TensorShapeError):
            train(Network(self.config), three, None, TrainConfig())


class TestEvaluate(unittest.TestCase):
    def test_per_class_accuracy(self):
        network = Network(parse_model_config(TINY))
        data = separable(50, seed=2)
        result = evaluate(network, data)
        self.assertEqual(result.count, 50)
        self.assertEqual(len(result.per_class_accuracy), 2)
        self.assertTrue(0.0 <= result.error <= 1.0)

    def test_median_final_error(self):
        runs = [[EpochMetrics(0, 0.1, 1.0, 0.5, err, 0.0)]
                for err in (0.3, 0.1, 0.2)]
        self.assertAlmostEqual(median_final_error(runs), 0.2)
        self.assertTrue(math.isnan(median_final_error([])))
