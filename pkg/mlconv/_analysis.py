# SPDX-License-Identifier: MIT

"""Parameter and multiply-accumulate counting.

One multiply-accumulate is one operation. Bias additions, pooling,
activations and batch normalization do not count towards MACs. Biases and
batch-normalization scales/shifts are counted as parameters but reported
apart from the filter weights.
"""

import csv
import io
import logging
import statistics
import time
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from ._config import LayerSpec, ModelConfig, validate_model_config, \
    variant_config
from ._exceptions import MlconvError

if TYPE_CHECKING:
    from ._network import Network

logger = logging.getLogger(__name__)

VARIANTS = ('cnn', 'mlconv1', 'lr26', 'mlconv2', 'lr53', 'mlconv4', 'lr106',
            'mlconv6')
SCHEME2_VARIANTS = ('mlconv1*', 'mlconv2*', 'mlconv4*', 'mlconv6*')

# published model sizes (10- and 100-class heads) and theoretical speedups
REFERENCE_PARAMS = {
    10: {'cnn': 1.38e6, 'mlconv1': 0.20e6, 'lr26': 0.20e6, 'mlconv2': 0.35e6,
         'lr53': 0.35e6, 'mlconv4': 0.65e6, 'lr106': 0.64e6,
         'mlconv6': 0.97e6},
    100: {'cnn': 1.39e6, 'mlconv1': 0.21e6, 'lr26': 0.21e6, 'mlconv2': 0.37e6,
          'lr53': 0.37e6, 'mlconv4': 0.67e6, 'lr106': 0.67e6,
          'mlconv6': 0.98e6},
}
REFERENCE_SPEEDUPS = {
    'mlconv1': 8.14, 'lr26': 6.48, 'mlconv2': 4.11, 'lr53': 3.20,
    'mlconv4': 2.06, 'lr106': 1.60, 'mlconv6': 1.38,
    'mlconv1*': 0.997, 'mlconv2*': 0.993, 'mlconv4*': 0.987,
    'mlconv6*': 0.980,
}


class GainRatios(NamedTuple):
    memory: float
    compute_scheme1: float
    compute_scheme2: float


def gain_ratios(d: int, c: int, r: int, x: int, y: int) -> GainRatios:
    """Dense-over-multilinear ratios of one layer: storage, scheme-1
    compute, and scheme-2 compute."""
    if min(d, c, r, x, y) < 1:
        raise MlconvError("gain ratios need positive arguments")
    return GainRatios(memory=d * d * c / (r * (2 * d + c)),
                      compute_scheme1=d * d * c / (r * (c + 2 * d)),
                      compute_scheme2=x * y / (r + x * y))


def _mlconv_macs(d: int, c: int, n: int, r: int, xy: int,
                 scheme: str) -> int:
    scheme1 = xy * n * r * (c + 2 * d)
    scheme2 = d * d * c * r * n + d * d * xy * c * n
    if scheme == '1':
        return scheme1
    if scheme == '2':
        return scheme2
    return min(scheme1, scheme2)


def cheaper_scheme(d: int, c: int, n: int, r: int, xy: int) -> str:
    return '1' if _mlconv_macs(d, c, n, r, xy, '1') \
        <= _mlconv_macs(d, c, n, r, xy, '2') else '2'


def resolve_schemes(config: ModelConfig) -> ModelConfig:
    """Replaces ``scheme=auto`` by whichever scheme needs fewer MACs at
    the layer's input resolution."""
    layers = []
    for spec, (x, y, c) in zip(config.layers, config.input_shapes()):
        if spec.kind == 'mlconv' and spec.scheme == 'auto':
            spec = replace(spec, scheme=cheaper_scheme(
                spec.d, c, spec.filters, spec.rank, x * y))
        layers.append(spec)
    return replace(config, layers=tuple(layers))


@dataclass(frozen=True)
class LayerCost:
    index: int
    kind: str
    weights: int
    biases: int
    bn: int
    macs: int

    @property
    def params(self) -> int:
        return self.weights + self.biases + self.bn


def _layer_cost(index: int, spec: LayerSpec,
                shape: Tuple[int, int, int]) -> LayerCost:
    x, y, c = shape
    d, n = spec.d, spec.filters
    if spec.kind == 'conv':
        return LayerCost(index, 'conv', d * d * c * n, n, 0,
                         d * d * x * y * c * n)
    if spec.kind == 'mlconv':
        return LayerCost(index, f'mlconv{spec.rank}/s{spec.scheme}',
                         spec.rank * (2 * d + c) * n, n, 0,
                         _mlconv_macs(d, c, n, spec.rank, x * y, spec.scheme))
    if spec.kind == 'lrconv':
        k = spec.k
        return LayerCost(index, f'lrconv{k}', d * c * k + d * k * n, n, 0,
                         d * x * y * c * k + d * x * y * k * n)
    if spec.kind == 'bn':
        return LayerCost(index, 'bn', 0, 0, 2 * c, 0)
    return LayerCost(index, spec.kind, 0, 0, 0, 0)


@dataclass(frozen=True)
class CostReport:
    resolution: Tuple[int, int]
    rows: Tuple[LayerCost, ...]

    @property
    def total_weights(self) -> int:
        return sum(r.weights for r in self.rows)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def ratios(self, baseline: 'CostReport') -> Tuple[float, float]:
        """(parameter gain, MAC gain) of this network over `baseline`,
        i.e. baseline cost divided by this cost."""
        if baseline.resolution != self.resolution:
            raise MlconvError(
                f"cannot compare reports at {baseline.resolution} "
                f"and {self.resolution}")
        return (baseline.total_params / self.total_params,
                baseline.total_macs / self.total_macs)


def cost_report(config: ModelConfig,
                resolution: Optional[Tuple[int, int]] = None) -> CostReport:
    if resolution is not None:
        config = config.with_resolution(*resolution)
        validate_model_config(config)
    rows = tuple(_layer_cost(i, spec, shape) for i, (spec, shape) in
                 enumerate(zip(config.layers, config.input_shapes())))
    return CostReport(resolution=config.input_shape[:2], rows=rows)


def count_params(config: ModelConfig) -> CostReport:
    return cost_report(config)


def count_macs(config: ModelConfig,
               resolution: Optional[Tuple[int, int]] = None) -> CostReport:
    return cost_report(config, resolution)


def _sig3(value: float) -> str:
    return f"{value:.3g}"


def format_cost_table(report: CostReport,
                      baseline: Optional[CostReport] = None) -> str:
    header = ('layer', 'kind', 'weights', 'biases', 'bn', 'params', 'macs')
    body = [(str(r.index), r.kind, str(r.weights), str(r.biases), str(r.bn),
             str(r.params), str(r.macs)) for r in report.rows if
            r.params or r.macs]
    body.append(('total', '', str(report.total_weights), '', '',
                 str(report.total_params), str(report.total_macs)))
    widths = [max(len(row[i]) for row in [header] + body)
              for i in range(len(header))]
    lines = ['  '.join(cell.rjust(w) for cell, w in zip(row, widths))
             for row in [header] + body]
    x, y = report.resolution
    lines.insert(0, f"resolution {x}x{y}")
    if baseline is not None:
        params_gain, macs_gain = report.ratios(baseline)
        lines.append(f"parameter gain vs baseline: {_sig3(params_gain)}x")
        lines.append(f"MAC gain vs baseline: {_sig3(macs_gain)}x")
    return "\n".join(lines) + "\n"


def cost_csv(report: CostReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(['layer', 'kind', 'weights', 'biases', 'bn', 'params',
                     'macs'])
    for r in report.rows:
        writer.writerow([r.index, r.kind, r.weights, r.biases, r.bn,
                         r.params, r.macs])
    writer.writerow(['total', '', report.total_weights, '', '',
                     report.total_params, report.total_macs])
    return out.getvalue()


@dataclass(frozen=True)
class VariantCost:
    name: str
    weights: int
    params: int
    macs: int
    speedup: float
    reference_params: Optional[float]
    reference_speedup: Optional[float]


def variant_table(classes: int = 10,
                  resolution: Tuple[int, int] = (32, 32)) -> List[VariantCost]:
    """Costs of the standard variants of the baseline network and their
    theoretical speedups over the dense network."""
    baseline = cost_report(variant_config('cnn', classes), resolution)
    rows = []
    for name in VARIANTS + SCHEME2_VARIANTS:
        report = cost_report(variant_config(name, classes), resolution)
        rows.append(VariantCost(
            name=name,
            weights=report.total_weights,
            params=report.total_params,
            macs=report.total_macs,
            speedup=baseline.total_macs / report.total_macs,
            reference_params=REFERENCE_PARAMS.get(classes, {}).get(name),
            reference_speedup=REFERENCE_SPEEDUPS.get(name)))
    return rows


def format_variant_table(rows: List[VariantCost]) -> str:
    header = ('variant', 'weights', 'params', 'ref params', 'macs',
              'speedup', 'ref speedup')
    body = []
    for r in rows:
        body.append((
            r.name, str(r.weights), f"{r.params / 1e6:.3f}M",
            f"{r.reference_params / 1e6:.2f}M" if r.reference_params else '-',
            str(r.macs), f"{_sig3(r.speedup)}x",
            f"{r.reference_speedup}x" if r.reference_speedup else '-'))
    widths = [max(len(row[i]) for row in [header] + body)
              for i in range(len(header))]
    return "\n".join('  '.join(cell.rjust(w) for cell, w in zip(row, widths))
                     for row in [header] + body) + "\n"


# wall-clock ##################################################################

@dataclass(frozen=True)
class BenchResult:
    mean: float
    stdev: float
    median: float
    samples: Tuple[float, ...]


def bench_forward(network: 'Network',
                  resolution: Optional[Tuple[int, int]] = None,
                  repetitions: int = 30,
                  seed: int = 0) -> BenchResult:
    """Times single-sample inference forwards after one warm-up pass."""
    if repetitions < 3:
        raise MlconvError(f"need at least 3 repetitions, got {repetitions}")
    x_size, y_size, channels = network.config.input_shape
    if resolution is not None:
        x_size, y_size = resolution
    rng = np.random.default_rng(seed)
    sample = rng.random((1, x_size, y_size, channels)).astype(network.dtype)
    network.forward(sample, training=False)
    samples = []
    for _ in range(repetitions):
        started = time.perf_counter()
        network.forward(sample, training=False)
        samples.append(time.perf_counter() - started)
    result = BenchResult(mean=statistics.mean(samples),
                         stdev=statistics.stdev(samples),
                         median=statistics.median(samples),
                         samples=tuple(samples))
    logger.debug("bench: mean %.6fs over %d runs", result.mean, repetitions)
    return result


def normalized_times(results: Dict[str, BenchResult],
                     baseline: str) -> Dict[str, float]:
    """Speedup of each entry over `baseline` by mean time."""
    base = results[baseline].mean
    return {name: base / r.mean for name, r in results.items()}
