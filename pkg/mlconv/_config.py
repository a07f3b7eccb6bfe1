# SPDX-License-Identifier: MIT

"""Line-oriented network description.

One directive per line, ``#`` starts a comment::

    input 32 32 3
    classes 10
    mlconv 3 96 rank=2 scheme=1
    bn
    lrelu 0.2
    maxpool
    conv 1 classes
    gap
    softmax

The filter count ``classes`` stands for the value of the ``classes``
directive, wherever that appears in the file.
"""

import hashlib
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

from ._constants import LRELU_ALPHA
from ._exceptions import ConfigError, TopologyError

CONV_KINDS = ('conv', 'mlconv', 'lrconv')
SCHEMES = ('1', '2', 'auto')

_CLASSES = -1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    d: int = 0
    filters: int = 0
    rank: int = 0
    scheme: str = '1'
    k: int = 0
    alpha: float = LRELU_ALPHA
    p: float = 0.0

    @property
    def is_conv(self) -> bool:
        return self.kind in CONV_KINDS

    def to_line(self) -> str:
        if self.kind == 'conv':
            return f"conv {self.d} {self.filters}"
        if self.kind == 'mlconv':
            return (f"mlconv {self.d} {self.filters} rank={self.rank} "
                    f"scheme={self.scheme}")
        if self.kind == 'lrconv':
            return f"lrconv {self.d} {self.filters} k={self.k}"
        if self.kind == 'lrelu':
            return f"lrelu {self.alpha!r}"
        if self.kind == 'dropout':
            return f"dropout {self.p!r}"
        return self.kind


@dataclass(frozen=True)
class ModelConfig:
    input_shape: Tuple[int, int, int]
    classes: int
    layers: Tuple[LayerSpec, ...]

    def input_shapes(self) -> List[Tuple[int, int, int]]:
        """Per-sample (X, Y, C) entering each layer."""
        shapes = []
        x, y, c = self.input_shape
        for spec in self.layers:
            shapes.append((x, y, c))
            if spec.is_conv:
                c = spec.filters
            elif spec.kind == 'maxpool':
                x, y = x // 2, y // 2
            elif spec.kind == 'gap':
                x, y = 1, 1
        return shapes

    def with_resolution(self, x: int, y: int) -> 'ModelConfig':
        return replace(self, input_shape=(x, y, self.input_shape[2]))

    def with_rank(self, rank: int) -> 'ModelConfig':
        """Sets the rank of every MLconv layer."""
        return replace(self, layers=tuple(
            replace(s, rank=rank) if s.kind == 'mlconv' else s
            for s in self.layers))


# parsing #####################################################################

def _int(token: str, what: str, line: int) -> int:
    try:
        return int(token)
    except ValueError as e:
        raise ConfigError(f"{what} must be an integer, got {token!r}",
                          inner=e, line=line)


def _float(token: str, what: str, line: int) -> float:
    try:
        return float(token)
    except ValueError as e:
        raise ConfigError(f"{what} must be a number, got {token!r}",
                          inner=e, line=line)


def _options(tokens: List[str], allowed: Tuple[str, ...],
             line: int) -> Dict[str, str]:
    options = {}
    for token in tokens:
        key, sep, value = token.partition('=')
        if not sep or key not in allowed:
            raise ConfigError(f"unexpected argument {token!r}", line=line)
        options[key] = value
    return options


def _filters(token: str, line: int) -> int:
    return _CLASSES if token == 'classes' else _int(token, "filter count",
                                                    line)


def _expect(tokens: List[str], low: int, high: int, directive: str,
            line: int) -> None:
    if not low <= len(tokens) <= high:
        raise ConfigError(f"'{directive}' takes {low}"
                          + (f" to {high}" if high != low else "")
                          + f" arguments, got {len(tokens)}", line=line)


def _parse_layer(directive: str, args: List[str], line: int) -> LayerSpec:
    if directive == 'conv':
        _expect(args, 2, 2, directive, line)
        return LayerSpec('conv', d=_int(args[0], "kernel size", line),
                         filters=_filters(args[1], line))
    if directive == 'mlconv':
        _expect(args, 3, 4, directive, line)
        opts = _options(args[2:], ('rank', 'scheme'), line)
        if 'rank' not in opts:
            raise ConfigError("'mlconv' needs rank=R", line=line)
        scheme = opts.get('scheme', '1')
        if scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {', '.join(SCHEMES)}, "
                              f"got {scheme!r}", line=line)
        rank = _int(opts['rank'], "rank", line)
        if rank < 1:
            raise ConfigError(f"rank must be at least 1, got {rank}",
                              line=line)
        return LayerSpec('mlconv', d=_int(args[0], "kernel size", line),
                         filters=_filters(args[1], line), rank=rank,
                         scheme=scheme)
    if directive == 'lrconv':
        _expect(args, 3, 3, directive, line)
        opts = _options(args[2:], ('k',), line)
        if 'k' not in opts:
            raise ConfigError("'lrconv' needs k=K", line=line)
        k = _int(opts['k'], "k", line)
        if k < 1:
            raise ConfigError(f"k must be at least 1, got {k}", line=line)
        return LayerSpec('lrconv', d=_int(args[0], "kernel size", line),
                         filters=_filters(args[1], line), k=k)
    if directive == 'lrelu':
        _expect(args, 0, 1, directive, line)
        if not args:
            return LayerSpec('lrelu')
        token = args[0].partition('alpha=')[2] or args[0]
        return LayerSpec('lrelu', alpha=_float(token, "alpha", line))
    if directive == 'dropout':
        _expect(args, 1, 1, directive, line)
        p = _float(args[0], "dropout probability", line)
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout probability must lie in [0, 1), "
                              f"got {p}", line=line)
        return LayerSpec('dropout', p=p)
    if directive in ('bn', 'maxpool', 'gap', 'softmax'):
        _expect(args, 0, 0, directive, line)
        return LayerSpec(directive)
    raise ConfigError(f"unknown directive {directive!r}", line=line)


def _lines(text: str) -> Iterator[Tuple[int, List[str]]]:
    for number, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.partition('#')[0].split()
        if tokens:
            yield number, tokens


def parse_model_config(text: str) -> ModelConfig:
    input_shape: Optional[Tuple[int, int, int]] = None
    classes: Optional[int] = None
    layers: List[LayerSpec] = []
    lines: List[int] = []

    for line, (directive, *args) in _lines(text):
        if directive == 'input':
            _expect(args, 3, 3, directive, line)
            x, y, c = (_int(a, "input size", line) for a in args)
            if min(x, y, c) < 1:
                raise ConfigError("input sizes must be positive", line=line)
            input_shape = (x, y, c)
        elif directive == 'classes':
            _expect(args, 1, 1, directive, line)
            classes = _int(args[0], "class count", line)
            if classes < 1:
                raise ConfigError("class count must be positive", line=line)
        else:
            layers.append(_parse_layer(directive, args, line))
            lines.append(line)

    if input_shape is None:
        raise ConfigError("missing 'input X Y C' directive")
    if classes is None:
        raise ConfigError("missing 'classes N' directive")

    layers = [replace(s, filters=classes) if s.filters == _CLASSES else s
              for s in layers]
    config = ModelConfig(input_shape, classes, tuple(layers))
    validate_model_config(config, lines)
    return config


def load_model_config(path: Union[str, Path]) -> ModelConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"cannot read model config {path}", inner=e)
    return parse_model_config(text)


def format_model_config(config: ModelConfig) -> str:
    x, y, c = config.input_shape
    lines = [f"input {x} {y} {c}", f"classes {config.classes}"]
    lines.extend(spec.to_line() for spec in config.layers)
    return "\n".join(lines) + "\n"


def config_hash(config: ModelConfig) -> str:
    return hashlib.sha256(
        format_model_config(config).encode('utf-8')).hexdigest()[:16]


# validation ##################################################################

def validate_model_config(config: ModelConfig,
                          lines: Optional[List[int]] = None) -> None:
    """Checks kernel sizes, spatial divisibility at pools and the output
    head. Errors carry the 0-based layer index."""

    def fail(message: str, index: int):
        line = lines[index] if lines else None
        raise TopologyError(message, line=line, layer_index=index)

    if not config.layers:
        raise TopologyError("the network has no layers")

    pooled = False
    for index, (spec, (x, y, c)) in enumerate(
            zip(config.layers, config.input_shapes())):
        if pooled and spec.kind not in ('softmax', 'dropout'):
            fail(f"'{spec.kind}' after global average pooling", index)
        if spec.is_conv:
            if spec.d < 1 or spec.d % 2 == 0:
                fail(f"kernel size must be odd and positive, got {spec.d}",
                     index)
            if spec.filters < 1:
                fail(f"filter count must be positive, got {spec.filters}",
                     index)
        elif spec.kind == 'maxpool':
            if x % 2 or y % 2:
                fail(f"2x2 max pooling on odd spatial size {x}x{y}", index)
        elif spec.kind == 'gap':
            pooled = True
            if c != config.classes:
                fail(f"global pooling sees {c} channels but the network "
                     f"has {config.classes} classes", index)
        elif spec.kind == 'softmax' and index != len(config.layers) - 1:
            fail("'softmax' must be the last layer", index)
    if not pooled:
        raise TopologyError("the network needs a 'gap' layer before the "
                            "softmax output")


# baseline topology ##########################################################

_BASELINE_BLOCKS = ((96, 96, 96), (192, 192, 192), (192,))


def baseline_config(kind: str = 'conv',
                  rank: int = 1,
                  k: int = 26,
                  scheme: str = '1',
                  classes: int = 10,
                  width: float = 1.0,
                  input_shape: Tuple[int, int, int] = (32, 32, 3)
                  ) -> ModelConfig:
    """The baseline network with every 3x3 layer of the given `kind`. The
    two trailing 1x1 layers stay dense convolutions."""
    if kind not in CONV_KINDS:
        raise ConfigError(f"unknown layer kind {kind!r}")

    def scaled(n: int) -> int:
        return max(1, int(round(n * width)))

    def body(n: int) -> LayerSpec:
        if kind == 'mlconv':
            return LayerSpec('mlconv', d=3, filters=n, rank=rank, scheme=scheme)
        if kind == 'lrconv':
            return LayerSpec('lrconv', d=3, filters=n, k=k)
        return LayerSpec('conv', d=3, filters=n)

    layers: List[LayerSpec] = []
    for block_index, block in enumerate(_BASELINE_BLOCKS):
        for n in block:
            layers += [body(scaled(n)), LayerSpec('bn'), LayerSpec('lrelu')]
        if block_index < 2:
            layers.append(LayerSpec('maxpool'))
    layers += [LayerSpec('conv', d=1, filters=scaled(192)), LayerSpec('bn'),
               LayerSpec('lrelu'),
               LayerSpec('conv', d=1, filters=classes), LayerSpec('lrelu'),
               LayerSpec('gap'), LayerSpec('softmax')]
    config = ModelConfig(input_shape, classes, tuple(layers))
    validate_model_config(config)
    return config


_VARIANT = re.compile(r'^(cnn|mlconv(\d+)|lr(\d+))(\*?)$')


def variant_config(name: str, classes: int = 10, width: float = 1.0,
                   input_shape: Tuple[int, int, int] = (32, 32, 3)
                   ) -> ModelConfig:
    """Baseline network by variant name: ``cnn``, ``mlconvR``, ``lrK``;
    a trailing ``*`` selects scheme 2 for MLconv."""
    m = _VARIANT.match(name.lower())
    if m is None:
        raise ConfigError(f"unknown network variant {name!r}")
    scheme = '2' if m.group(4) else '1'
    if m.group(2):
        return baseline_config('mlconv', rank=int(m.group(2)), scheme=scheme,
                             classes=classes, width=width,
                             input_shape=input_shape)
    if m.group(4):
        raise ConfigError(f"'*' applies to MLconv variants only: {name!r}")
    if m.group(3):
        return baseline_config('lrconv', k=int(m.group(3)), classes=classes,
                             width=width, input_shape=input_shape)
    return baseline_config('conv', classes=classes, width=width,
                         input_shape=input_shape)
