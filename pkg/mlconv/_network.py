# SPDX-License-Identifier: MIT

from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import _ops as ops
from ._analysis import resolve_schemes
from ._config import LayerSpec, ModelConfig
from ._exceptions import CheckpointError, TensorShapeError
from ._layers import BatchNorm, Conv2D, Dropout, GlobalAvgPool, Layer, \
    LeakyReLU, LRConv2D, MaxPool2x2, MLConv2D


def build_layer(spec: LayerSpec, channels: int, dtype,
                rng: np.random.Generator) -> Optional[Layer]:
    if spec.kind == 'conv':
        return Conv2D(spec.d, channels, spec.filters, dtype=dtype)
    if spec.kind == 'mlconv':
        return MLConv2D(spec.d, channels, spec.filters, spec.rank,
                        scheme=int(spec.scheme), dtype=dtype)
    if spec.kind == 'lrconv':
        return LRConv2D(spec.d, channels, spec.filters, spec.k, dtype=dtype)
    if spec.kind == 'bn':
        return BatchNorm(channels, dtype=dtype)
    if spec.kind == 'lrelu':
        return LeakyReLU(spec.alpha)
    if spec.kind == 'maxpool':
        return MaxPool2x2()
    if spec.kind == 'dropout':
        return Dropout(spec.p, rng)
    if spec.kind == 'gap':
        return GlobalAvgPool()
    # softmax is applied by the loss
    return None


class Network:
    """Sequential network built from a `ModelConfig`.

    `dropout_input` and `dropout_pool` insert dropout on the input and
    after every max pooling on top of the dropout layers the config
    declares. The forward output is the (B, classes) logits.
    """

    def __init__(self,
                 config: ModelConfig,
                 dtype=np.float32,
                 seed: int = 0,
                 dropout_input: float = 0.0,
                 dropout_pool: float = 0.0,
                 initialize: bool = True):
        self.config = resolve_schemes(config)
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self.layers: List[Layer] = []
        self.names: List[str] = []
        self.by_index: Dict[int, Layer] = {}

        if dropout_input > 0:
            self._append("input.dropout", Dropout(dropout_input, self.rng))
        for index, (spec, (_, _, channels)) in enumerate(
                zip(self.config.layers, self.config.input_shapes())):
            layer = build_layer(spec, channels, self.dtype, self.rng)
            if layer is not None:
                self._append(f"{index:02d}.{spec.kind}", layer)
                self.by_index[index] = layer
            if spec.kind == 'maxpool' and dropout_pool > 0:
                self._append(f"{index:02d}.dropout",
                             Dropout(dropout_pool, self.rng))

        if initialize:
            for layer in self.layers:
                layer.init_params(self.rng)

    def _append(self, name: str, layer: Layer) -> None:
        self.names.append(name)
        self.layers.append(layer)

    # forward / backward ######################################################

    def _check_input(self, x: np.ndarray) -> None:
        channels = self.config.input_shape[2]
        if x.ndim != 4 or x.shape[3] != channels:
            raise TensorShapeError(
                f"network expects (B, X, Y, {channels}) input, "
                f"got {x.shape}")

    def forward_with_activations(self, x: np.ndarray, training: bool = False
                                 ) -> Tuple[np.ndarray, List[np.ndarray]]:
        self._check_input(x)
        activations = [x]
        for layer in self.layers:
            x = layer.forward(x, training)
            activations.append(x)
        return x, activations

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        return self.forward_with_activations(x, training)[0]

    def backward(self, d_logits: np.ndarray) -> np.ndarray:
        grad = d_logits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def loss_and_grads(self, x: np.ndarray,
                       labels: np.ndarray) -> Tuple[float, np.ndarray]:
        """Training-mode forward, cross-entropy, backward. Returns
        (loss, probs); gradients are left on the layers."""
        logits = self.forward(x, training=True)
        loss, probs = ops.softmax_xent(logits, labels)
        self.backward(ops.softmax_xent_backward(probs, labels))
        return loss, probs

    def predict_proba(self, x: np.ndarray, batch_size: int = 500) -> np.ndarray:
        chunks = [ops.softmax(self.forward(x[i:i + batch_size]))
                  for i in range(0, len(x), batch_size)]
        if not chunks:
            return np.zeros((0, self.config.classes), self.dtype)
        return np.concatenate(chunks)

    # parameters ##############################################################

    def named_params(self) -> Dict[str, np.ndarray]:
        return OrderedDict((f"{name}.{key}", value)
                           for name, layer in zip(self.names, self.layers)
                           for key, value in layer.params.items())

    def named_grads(self) -> Dict[str, np.ndarray]:
        return OrderedDict((f"{name}.{key}", layer.grads[key])
                           for name, layer in zip(self.names, self.layers)
                           for key in layer.params)

    def weight_keys(self) -> List[str]:
        return [f"{name}.{key}"
                for name, layer in zip(self.names, self.layers)
                for key in layer.weight_names]

    def conv_layers(self) -> Iterator[Tuple[str, Layer]]:
        for name, layer in zip(self.names, self.layers):
            if isinstance(layer, (Conv2D, MLConv2D, LRConv2D)):
                yield name, layer

    def state_dict(self) -> Dict[str, np.ndarray]:
        state: Dict[str, np.ndarray] = OrderedDict()
        for name, layer in zip(self.names, self.layers):
            for key, value in list(layer.params.items()) \
                    + list(layer.buffers.items()):
                state[f"{name}.{key}"] = value
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        if missing or unexpected:
            raise CheckpointError(
                f"state does not match the network: missing {missing}, "
                f"unexpected {unexpected}")
        for key, target in own.items():
            source = np.asarray(state[key])
            if source.shape != target.shape:
                raise CheckpointError(
                    f"{key}: expected shape {target.shape}, "
                    f"got {source.shape}")
            np.copyto(target, source, casting='unsafe')

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_params().values())

    def weight_count(self) -> int:
        params = self.named_params()
        return sum(params[k].size for k in self.weight_keys())
