# SPDX-License-Identifier: MIT

"""Layers of a sequential network.

Every layer keeps its learnable tensors in ``params`` and, after
``backward``, the matching gradients in ``grads`` under the same names.
``buffers`` holds non-learnable state that is still checkpointed (batch
normalization statistics). Forward caches live on the layer between a
``forward`` call and the ``backward`` call that differentiates it.
"""

from typing import Any, Dict, Optional, Tuple

import numpy as np

from . import _ops as ops
from ._constants import BN_EPSILON, BN_MOMENTUM, LRELU_ALPHA
from ._exceptions import MlconvError, TensorShapeError
from ._tensor import KruskalFactors

Shape = Tuple[int, int, int]  # (X, Y, C) of one sample


class Layer:
    kind: str = ''

    # names of the tensors that count as weights (decay, max-norm)
    weight_names: Tuple[str, ...] = ()

    # groups of weight tensors that together form one filter per index
    # along `filter_axis`
    max_norm_groups: Tuple[Tuple[str, ...], ...] = ()
    filter_axis: Dict[str, int] = {}

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self._cache: Any = None

    def output_shape(self, input_shape: Shape) -> Shape:
        return input_shape

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _require_cache(self) -> Any:
        if self._cache is None:
            raise MlconvError(
                f"{self.kind}: backward called without a preceding forward")
        return self._cache

    def __repr__(self):
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self.params.items())
        return f"{type(self).__name__}({shapes})"


def _he_normal(rng: np.random.Generator, shape, fan_in: int,
               dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2D(Layer):
    """N dense d×d×C kernels with biases."""
    kind = 'conv'
    weight_names = ('w',)
    max_norm_groups = (('w',),)
    filter_axis = {'w': 3}

    def __init__(self, d: int, channels: int, filters: int, dtype=np.float32):
        super().__init__()
        self.d, self.channels, self.filters = d, channels, filters
        self.params['w'] = np.zeros((d, d, channels, filters), dtype)
        self.params['b'] = np.zeros(filters, dtype)

    def output_shape(self, input_shape: Shape) -> Shape:
        return input_shape[0], input_shape[1], self.filters

    def init_params(self, rng: np.random.Generator) -> None:
        w = self.params['w']
        self.params['w'] = _he_normal(rng, w.shape, self.d * self.d *
                                      self.channels, w.dtype)
        self.params['b'] = np.zeros_like(self.params['b'])

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._cache = x
        return ops.conv2d_forward(x, self.params['w'], self.params['b'])

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._require_cache()
        dx, self.grads['w'], self.grads['b'] = ops.conv2d_backward(
            x, self.params['w'], dy)
        return dx


class MLConv2D(Layer):
    """N rank-R multilinear filters. Scheme 1 evaluates them as pointwise,
    vertical and horizontal convolutions, scheme 2 reconstructs the dense
    kernels first; both give the same map."""
    kind = 'mlconv'
    weight_names = ('w1', 'w2', 'w3')
    max_norm_groups = (('w1', 'w2', 'w3'),)
    filter_axis = {'w1': 1, 'w2': 1, 'w3': 1}

    def __init__(self, d: int, channels: int, filters: int, rank: int,
                 scheme: int = 1, dtype=np.float32):
        super().__init__()
        if rank < 1:
            raise MlconvError(f"MLconv rank must be at least 1, got {rank}")
        if scheme not in (1, 2):
            raise MlconvError(f"MLconv scheme must be 1 or 2, got {scheme}")
        self.d, self.channels, self.filters = d, channels, filters
        self.rank, self.scheme = rank, scheme
        self.params['w1'] = np.zeros((d, filters, rank), dtype)
        self.params['w2'] = np.zeros((d, filters, rank), dtype)
        self.params['w3'] = np.zeros((channels, filters, rank), dtype)
        self.params['b'] = np.zeros(filters, dtype)

    def output_shape(self, input_shape: Shape) -> Shape:
        return input_shape[0], input_shape[1], self.filters

    def init_params(self, rng: np.random.Generator) -> None:
        # each factor gets std s with R * s**6 == 2 / fan_in
        fan_in = self.d * self.d * self.channels
        std = (2.0 / (fan_in * self.rank)) ** (1.0 / 6.0)
        for name in self.weight_names:
            p = self.params[name]
            self.params[name] = (rng.standard_normal(p.shape) * std) \
                .astype(p.dtype)
        self.params['b'] = np.zeros_like(self.params['b'])

    def filter_factors(self, n: int) -> KruskalFactors:
        return KruskalFactors(self.params['w1'][:, n, :],
                              self.params['w2'][:, n, :],
                              self.params['w3'][:, n, :])

    def set_filter_factors(self, n: int, factors: KruskalFactors) -> None:
        if factors.shape != (self.d, self.d, self.channels) \
                or factors.rank != self.rank:
            raise TensorShapeError(
                f"factors of shape {factors.shape} and rank {factors.rank} "
                f"do not fit a {self.d}x{self.d}x{self.channels} "
                f"rank-{self.rank} filter")
        for name, matrix in zip(self.weight_names, factors.matrices()):
            self.params[name][:, n, :] = matrix

    def kernel(self) -> np.ndarray:
        return ops.mlconv_kernel(self.params['w1'], self.params['w2'],
                                 self.params['w3'])

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        w1, w2, w3, b = (self.params[k] for k in ('w1', 'w2', 'w3', 'b'))
        if self.scheme == 1:
            stages = ops.mlconv_scheme1_stages(x, w1, w2, w3, b)
            self._cache = (x, stages)
            return stages.output
        kernel = ops.mlconv_kernel(w1, w2, w3)
        self._cache = (x, kernel)
        return ops.conv2d_forward(x, kernel, b)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, saved = self._require_cache()
        w1, w2, w3 = (self.params[k] for k in ('w1', 'w2', 'w3'))
        if self.scheme == 1:
            grads = ops.mlconv_backward_scheme1(x, w1, w2, w3, dy,
                                                stages=saved)
        else:
            grads = ops.mlconv_backward_scheme2(x, w1, w2, w3, dy,
                                                kernel=saved)
        dx, *param_grads = grads
        for name, g in zip(('w1', 'w2', 'w3', 'b'), param_grads):
            self.grads[name] = g
        return dx


class LRConv2D(Layer):
    """K vertical d×1×C kernels followed by N horizontal 1×d×K kernels."""
    kind = 'lrconv'
    weight_names = ('v', 'h')
    max_norm_groups = (('v',), ('h',))
    filter_axis = {'v': 3, 'h': 3}

    def __init__(self, d: int, channels: int, filters: int, k: int,
                 dtype=np.float32):
        super().__init__()
        if k < 1:
            raise MlconvError(f"LR rank K must be at least 1, got {k}")
        self.d, self.channels, self.filters, self.k = d, channels, filters, k
        self.params['v'] = np.zeros((d, 1, channels, k), dtype)
        self.params['h'] = np.zeros((1, d, k, filters), dtype)
        self.params['b'] = np.zeros(filters, dtype)

    def output_shape(self, input_shape: Shape) -> Shape:
        return input_shape[0], input_shape[1], self.filters

    def init_params(self, rng: np.random.Generator) -> None:
        v, h = self.params['v'], self.params['h']
        self.params['v'] = _he_normal(rng, v.shape, self.d * self.channels,
                                      v.dtype)
        self.params['h'] = _he_normal(rng, h.shape, self.d * self.k, h.dtype)
        self.params['b'] = np.zeros_like(self.params['b'])

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        vertical = ops.conv2d_forward(x, self.params['v'])
        self._cache = (x, vertical)
        return ops.conv2d_forward(vertical, self.params['h'], self.params['b'])

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, vertical = self._require_cache()
        dx, self.grads['v'], self.grads['h'], self.grads['b'] = \
            ops.lrconv_backward(x, self.params['v'], self.params['h'], dy,
                                vertical=vertical)
        return dx


class BatchNorm(Layer):
    kind = 'bn'

    def __init__(self, channels: int, epsilon: float = BN_EPSILON,
                 momentum: float = BN_MOMENTUM, dtype=np.float32):
        super().__init__()
        if not 0.0 < momentum < 1.0:
            raise MlconvError(f"momentum must lie in (0, 1), got {momentum}")
        self.channels, self.epsilon, self.momentum = channels, epsilon, momentum
        self.params['gamma'] = np.ones(channels, dtype)
        self.params['beta'] = np.zeros(channels, dtype)
        self.buffers['running_mean'] = np.zeros(channels, dtype)
        self.buffers['running_var'] = np.ones(channels, dtype)

    def init_params(self, rng: np.random.Generator) -> None:
        for name in ('gamma', 'beta'):
            self.params[name] = np.full_like(self.params[name],
                                             1.0 if name == 'gamma' else 0.0)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        y, self._cache, mean, var = ops.batchnorm_forward(
            x, self.params['gamma'], self.params['beta'],
            self.buffers['running_mean'], self.buffers['running_var'],
            training, self.epsilon, self.momentum)
        dtype = self.buffers['running_mean'].dtype
        self.buffers['running_mean'] = np.asarray(mean, dtype)
        self.buffers['running_var'] = np.asarray(var, dtype)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        cache = self._require_cache()
        dx, self.grads['gamma'], self.grads['beta'] = ops.batchnorm_backward(
            self.params['gamma'], cache, dy)
        return dx


class LeakyReLU(Layer):
    kind = 'lrelu'

    def __init__(self, alpha: float = LRELU_ALPHA):
        super().__init__()
        self.alpha = alpha

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._cache = x
        return ops.lrelu(x, self.alpha)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return ops.lrelu_backward(self._require_cache(), self.alpha, dy)


class MaxPool2x2(Layer):
    kind = 'maxpool'

    def output_shape(self, input_shape: Shape) -> Shape:
        return input_shape[0] // 2, input_shape[1] // 2, input_shape[2]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        y, self._cache = ops.maxpool2x2(x)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return ops.maxpool2x2_backward(self._require_cache(), dy)


class Dropout(Layer):
    kind = 'dropout'

    def __init__(self, p: float, rng: Optional[np.random.Generator] = None):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise MlconvError(f"dropout probability must lie in [0, 1), "
                              f"got {p}")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        y, self._cache = ops.dropout(x, self.p, training, self.rng)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        mask = self._cache
        return dy if mask is None else dy * mask


class GlobalAvgPool(Layer):
    """Averages over the spatial axes; the output is (B, C)."""
    kind = 'gap'

    def output_shape(self, input_shape: Shape) -> Shape:
        return 1, 1, input_shape[2]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._cache = x.shape
        return ops.global_avg_pool(x)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return ops.global_avg_pool_backward(self._require_cache(), dy)
