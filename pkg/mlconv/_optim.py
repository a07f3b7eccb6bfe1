# SPDX-License-Identifier: MIT

"""Optimizers, regularizers and learning-rate schedules.

Parameters and gradients are dicts of arrays keyed by name; steps update
the parameter arrays in place so layers keep seeing their own tensors.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ._constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, SC1, SC2, \
    SGD_MOMENTUM
from ._exceptions import MlconvError, TensorShapeError
from ._layers import Layer

Params = Dict[str, np.ndarray]
Schedule = Sequence[Tuple[float, int]]


@dataclass
class OptimizerState:
    first: Params = field(default_factory=dict)
    second: Params = field(default_factory=dict)
    step: int = 0


@dataclass(frozen=True)
class SGDMomentum:
    momentum: float = SGD_MOMENTUM


@dataclass(frozen=True)
class Adam:
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


Optimizer = Union[SGDMomentum, Adam]


def _pairs(params: Params, grads: Params):
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise TensorShapeError(
                f"{key}: gradient shape {g.shape} does not match "
                f"parameter shape {p.shape}")
        yield key, p, g


def _slot(slots: Params, key: str, like: np.ndarray) -> np.ndarray:
    if key not in slots:
        slots[key] = np.zeros_like(like)
    return slots[key]


def sgd_momentum_step(params: Params, grads: Params, state: OptimizerState,
                      lr: float, momentum: float) -> OptimizerState:
    """Classical momentum: ``v = momentum * v + g; p -= lr * v``."""
    for key, p, g in _pairs(params, grads):
        v = _slot(state.first, key, p)
        v *= momentum
        v += g
        p -= lr * v
    state.step += 1
    return state


def adam_step(params: Params, grads: Params, state: OptimizerState,
              lr: float, beta1: float, beta2: float,
              eps: float) -> OptimizerState:
    state.step += 1
    t = state.step
    for key, p, g in _pairs(params, grads):
        m = _slot(state.first, key, p)
        v = _slot(state.second, key, p)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def optimizer_step(optimizer: Optimizer, params: Params, grads: Params,
                   state: OptimizerState, lr: float) -> OptimizerState:
    if isinstance(optimizer, Adam):
        return adam_step(params, grads, state, lr, optimizer.beta1,
                         optimizer.beta2, optimizer.eps)
    return sgd_momentum_step(params, grads, state, lr, optimizer.momentum)


def apply_weight_decay(params: Params, grads: Params, decay: float,
                       keys: Optional[Iterable[str]] = None) -> Params:
    """Returns gradients with ``decay * p`` added, the gradient of
    ``decay / 2 * ‖p‖²``, for the given keys (all by default)."""
    if decay < 0:
        raise MlconvError(f"weight decay must be non-negative, got {decay}")
    decayed = set(params if keys is None else keys)
    if decay == 0:
        return dict(grads)
    return {key: g + decay * params[key] if key in decayed else g
            for key, g in grads.items()}


def filter_norms(layer: Layer) -> List[np.ndarray]:
    """L2 norm of every filter, one array per filter group of the layer."""
    norms = []
    for group in layer.max_norm_groups:
        squares = None
        for name in group:
            p = layer.params[name].astype(np.float64)
            axis = layer.filter_axis[name]
            other = tuple(a for a in range(p.ndim) if a != axis)
            s = (p * p).sum(axis=other)
            squares = s if squares is None else squares + s
        norms.append(np.sqrt(squares))
    return norms


def apply_max_norm(layer: Layer, radius: float) -> Layer:
    """Rescales every filter whose parameter vector is longer than
    `radius` back onto the ball. An MLconv filter is the concatenation of
    its factor columns."""
    if not radius > 0:
        raise MlconvError(f"max-norm radius must be positive, got {radius}")
    for group, norms in zip(layer.max_norm_groups, filter_norms(layer)):
        scale = np.where(norms > radius, radius / np.maximum(norms, 1e-300),
                         1.0)
        for name in group:
            p = layer.params[name]
            shape = [1] * p.ndim
            shape[layer.filter_axis[name]] = -1
            p *= scale.reshape(shape).astype(p.dtype)
    return layer


# learning rate ###############################################################

def make_schedule(rates: Sequence[float], epochs_per_step: int) -> Schedule:
    return [(rate, epochs_per_step) for rate in rates]


def named_schedule(name: str, epochs_per_step: int) -> Schedule:
    rates = {'sc1': SC1, 'sc2': SC2}.get(name.lower())
    if rates is None:
        raise MlconvError(f"unknown schedule {name!r}")
    return make_schedule(rates, epochs_per_step)


def schedule_lr(schedule: Schedule, epoch: int) -> float:
    """Piecewise-constant rate; stays at the last rate once the schedule
    is exhausted."""
    if not schedule:
        raise MlconvError("empty learning-rate schedule")
    if epoch < 0:
        raise MlconvError(f"epoch must be non-negative, got {epoch}")
    start = 0
    for rate, span in schedule:
        if epoch < start + span:
            return rate
        start += span
    return schedule[-1][0]
