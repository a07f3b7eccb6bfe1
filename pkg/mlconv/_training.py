# SPDX-License-Identifier: MIT

"""Mini-batch training loop and evaluation."""

import csv
import io
import logging
import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ._config import ModelConfig
from ._constants import BATCH_SIZE, SC2
from ._datasets import Dataset, augment_batch
from ._exceptions import ConfigError, TensorShapeError, TrainingDiverged
from ._network import Network
from ._optim import Adam, Optimizer, OptimizerState, SGDMomentum, \
    apply_max_norm, apply_weight_decay, make_schedule, optimizer_step, \
    schedule_lr

logger = logging.getLogger(__name__)

StepCallback = Callable[[int, int, Network], None]


@dataclass(frozen=True)
class Augmentation:
    flip: bool = False
    max_translate: int = 0


@dataclass(frozen=True)
class TrainConfig:
    optimizer: Optimizer = field(default_factory=SGDMomentum)
    schedule: Tuple[Tuple[float, int], ...] = tuple(make_schedule(SC2, 40))
    batch_size: int = BATCH_SIZE
    max_epochs: int = 100
    weight_decay: float = 0.0
    max_norm: Optional[float] = None
    dropout_input: float = 0.0
    dropout_pool: float = 0.0
    seed: int = 0
    augmentation: Augmentation = field(default_factory=Augmentation)
    record_time: bool = True

    def __post_init__(self):
        if not self.schedule:
            raise ConfigError("the learning-rate schedule is empty")
        rates = [rate for rate, _ in self.schedule]
        if any(b >= a for a, b in zip(rates, rates[1:])):
            raise ConfigError(f"learning rates must strictly decrease, "
                              f"got {rates}")
        if any(rate < 0 for rate in rates) \
                or any(span < 1 for _, span in self.schedule):
            raise ConfigError("schedule rates must be non-negative and "
                              "spans positive")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be at least 1, "
                              f"got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError(f"epoch count must be non-negative, "
                              f"got {self.max_epochs}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be non-negative, "
                              f"got {self.weight_decay}")
        if self.max_norm is not None and not self.max_norm > 0:
            raise ConfigError(f"max-norm radius must be positive, "
                              f"got {self.max_norm}")
        for name in ('dropout_input', 'dropout_pool'):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {p}")
        if self.augmentation.max_translate < 0:
            raise ConfigError("max_translate must be non-negative")

    def describe(self) -> List[Tuple[str, str]]:
        """Flat (key, value) pairs for run manifests."""
        opt = self.optimizer
        if isinstance(opt, Adam):
            optimizer = f"adam(beta1={opt.beta1}, beta2={opt.beta2}, " \
                        f"eps={opt.eps})"
        else:
            optimizer = f"sgd(momentum={opt.momentum})"
        schedule = ",".join(f"{rate}:{span}" for rate, span in self.schedule)
        return [('optimizer', optimizer),
                ('schedule', schedule),
                ('batch_size', str(self.batch_size)),
                ('max_epochs', str(self.max_epochs)),
                ('weight_decay', repr(self.weight_decay)),
                ('max_norm', repr(self.max_norm)),
                ('dropout_input', repr(self.dropout_input)),
                ('dropout_pool', repr(self.dropout_pool)),
                ('seed', str(self.seed)),
                ('flip', str(self.augmentation.flip).lower()),
                ('max_translate', str(self.augmentation.max_translate)),
                ('record_time', str(self.record_time).lower())]


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    train_err: float
    test_err: float
    wall_seconds: float


@dataclass(frozen=True)
class Evaluation:
    error: float
    per_class_accuracy: Tuple[float, ...]
    count: int


def build_network(model_config: ModelConfig, config: TrainConfig,
                  dtype=np.float32) -> Network:
    """Network with the dropout of `config`, initialized from its seed."""
    return Network(model_config, dtype=dtype, seed=config.seed,
                   dropout_input=config.dropout_input,
                   dropout_pool=config.dropout_pool)


def _check_compatible(network: Network, dataset: Dataset) -> None:
    x, y, c = network.config.input_shape
    if dataset.image_shape[2] != c:
        raise TensorShapeError(
            f"the network takes {c} channels, the dataset has "
            f"{dataset.image_shape[2]}")
    if dataset.class_count != network.config.classes:
        raise TensorShapeError(
            f"the network has {network.config.classes} classes, the dataset "
            f"has {dataset.class_count}")


def evaluate(network: Network, dataset: Dataset,
             batch_size: int = 500) -> Evaluation:
    """Inference-mode error rate and per-class accuracy. Classes without
    samples get NaN accuracy."""
    _check_compatible(network, dataset)
    probs = network.predict_proba(dataset.images.astype(network.dtype),
                                  batch_size)
    predicted = probs.argmax(axis=1)
    correct = predicted == dataset.labels
    accuracy = []
    for k in range(dataset.class_count):
        members = dataset.labels == k
        accuracy.append(float(correct[members].mean())
                        if members.any() else math.nan)
    error = 1.0 - float(correct.mean()) if len(dataset) else math.nan
    return Evaluation(error=error, per_class_accuracy=tuple(accuracy),
                      count=len(dataset))


def train(network: Network,
          train_set: Dataset,
          test_set: Optional[Dataset],
          config: TrainConfig,
          on_step: Optional[StepCallback] = None) -> List[EpochMetrics]:
    """Trains `network` in place and returns one metrics row per epoch.

    Every epoch shuffles, augments, steps the optimizer on each mini-batch
    and then sweeps the max-norm constraint over all filters. `on_step` is
    called as ``on_step(epoch, step, network)`` after every step.
    """
    _check_compatible(network, train_set)
    if test_set is not None:
        _check_compatible(network, test_set)

    rng = np.random.default_rng(config.seed)
    state = OptimizerState()
    weight_keys = network.weight_keys()
    images = train_set.images
    labels = train_set.labels
    rows: List[EpochMetrics] = []
    step = 0

    for epoch in range(config.max_epochs):
        started = time.perf_counter()
        lr = schedule_lr(config.schedule, epoch)
        order = rng.permutation(len(train_set))
        loss_sum = 0.0
        errors = 0

        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            x = augment_batch(images[batch], rng, config.augmentation.flip,
                              config.augmentation.max_translate)
            y = labels[batch]
            loss, probs = network.loss_and_grads(x.astype(network.dtype), y)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at lr {lr}",
                                       epoch=epoch, step=step)
            params = network.named_params()
            grads = apply_weight_decay(params, network.named_grads(),
                                       config.weight_decay, keys=weight_keys)
            optimizer_step(config.optimizer, params, grads, state, lr)
            if config.max_norm is not None:
                for _, layer in network.conv_layers():
                    apply_max_norm(layer, config.max_norm)

            loss_sum += loss * len(batch)
            errors += int((probs.argmax(axis=1) != y).sum())
            step += 1
            if on_step is not None:
                on_step(epoch, step, network)

        count = max(len(train_set), 1)
        test_err = evaluate(network, test_set).error \
            if test_set is not None else math.nan
        row = EpochMetrics(
            epoch=epoch, lr=lr, train_loss=loss_sum / count,
            train_err=errors / count, test_err=test_err,
            wall_seconds=time.perf_counter() - started
            if config.record_time else 0.0)
        rows.append(row)
        logger.info("epoch %d lr %g: loss %.4f, train err %.4f, "
                    "test err %.4f", epoch, lr, row.train_loss,
                    row.train_err, row.test_err)
    return rows


def metrics_csv(rows: Sequence[EpochMetrics]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(['epoch', 'lr', 'train_loss', 'train_err', 'test_err',
                     'wall_seconds'])
    for r in rows:
        writer.writerow([r.epoch, repr(r.lr), f"{r.train_loss:.8f}",
                         f"{r.train_err:.6f}", f"{r.test_err:.6f}",
                         f"{r.wall_seconds:.3f}"])
    return out.getvalue()


def median_final_error(runs: Sequence[Sequence[EpochMetrics]]) -> float:
    """Median over runs of the last epoch's test error."""
    finals = [rows[-1].test_err for rows in runs if rows]
    if not finals:
        return math.nan
    return statistics.median(finals)
