# SPDX-License-Identifier: MIT

"""Initializes an MLconv network from a trained dense network by
decomposing every dense kernel into rank-R Kruskal factors."""

import csv
import io
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ._config import ModelConfig
from ._constants import CONVERT_MAX_ITERS, CONVERT_TOL
from ._cp_als import cp_als
from ._exceptions import TopologyError
from ._layers import Conv2D, MLConv2D
from ._network import Network

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayerFit:
    index: int
    rank: int
    filters: int
    mean_fit: float
    min_fit: float
    max_iterations: int
    all_converged: bool


def _check_topology(source: ModelConfig, target: ModelConfig) -> None:
    if source.input_shape != target.input_shape \
            or source.classes != target.classes:
        raise TopologyError(
            f"input {source.input_shape} / {source.classes} classes of the "
            f"source differ from {target.input_shape} / {target.classes} "
            f"of the target")
    if len(source.layers) != len(target.layers):
        raise TopologyError(
            f"source has {len(source.layers)} layers, target has "
            f"{len(target.layers)}")
    shapes = zip(source.input_shapes(), target.input_shapes())
    for index, (s, t, (s_in, t_in)) in enumerate(
            zip(source.layers, target.layers, shapes)):
        if s.is_conv != t.is_conv or (not s.is_conv and s.kind != t.kind):
            raise TopologyError(f"layer kinds differ: {s.kind} vs {t.kind}",
                                layer_index=index)
        if not s.is_conv:
            continue
        if s.kind != 'conv':
            raise TopologyError(f"source layer is {s.kind}, expected conv",
                                layer_index=index)
        if t.kind == 'lrconv':
            raise TopologyError("cannot initialize lrconv layers from "
                                "dense kernels", layer_index=index)
        if (s.d, s_in[2], s.filters) != (t.d, t_in[2], t.filters):
            raise TopologyError(
                f"kernel {s.d}x{s.d}x{s_in[2]} x {s.filters} does not match "
                f"{t.d}x{t.d}x{t_in[2]} x {t.filters}", layer_index=index)
    if not any(t.kind == 'mlconv' for t in target.layers):
        raise TopologyError("the target network has no mlconv layers")


def convert_cnn_to_mlconv(source: Network,
                          target_config: ModelConfig,
                          rank: Optional[int] = None,
                          max_iters: int = CONVERT_MAX_ITERS,
                          tol: float = CONVERT_TOL,
                          seed: int = 0,
                          dtype=None) -> Tuple[Network, List[LayerFit]]:
    """Builds the target network, decomposes each dense filter of the
    source at the target layer's rank and copies every other parameter and
    buffer. `rank` overrides the ranks of all target MLconv layers."""
    if rank is not None:
        target_config = target_config.with_rank(rank)
    _check_topology(source.config, target_config)
    target = Network(target_config,
                     dtype=source.dtype if dtype is None else dtype,
                     seed=seed, initialize=False)

    fits: List[LayerFit] = []
    for index, spec in enumerate(target.config.layers):
        src = source.by_index.get(index)
        dst = target.by_index.get(index)
        if src is None or dst is None:
            continue
        if isinstance(dst, MLConv2D):
            assert isinstance(src, Conv2D)
            fits.append(_decompose_layer(index, src, dst, max_iters, tol,
                                         seed))
            continue
        for name, value in list(src.params.items()) \
                + list(src.buffers.items()):
            owner = dst.params if name in dst.params else dst.buffers
            owner[name] = np.asarray(value, dtype=owner[name].dtype).copy()
    return target, fits


def _decompose_layer(index: int, src: Conv2D, dst: MLConv2D,
                     max_iters: int, tol: float, seed: int) -> LayerFit:
    w = src.params['w']
    layer_fits = []
    iterations = []
    converged = True
    for n in range(dst.filters):
        factors, report = cp_als(w[:, :, :, n], dst.rank,
                                 max_iters=max_iters, tol=tol, seed=seed)
        dst.set_filter_factors(n, factors)
        layer_fits.append(report.final_fit)
        iterations.append(report.iterations_run)
        converged = converged and report.converged
    dst.params['b'] = src.params['b'].astype(dst.params['b'].dtype)
    fit = LayerFit(index=index, rank=dst.rank, filters=dst.filters,
                   mean_fit=float(np.mean(layer_fits)),
                   min_fit=float(np.min(layer_fits)),
                   max_iterations=int(max(iterations)),
                   all_converged=converged)
    logger.info("layer %d: %d filters at rank %d, mean fit %.6f", index,
                fit.filters, fit.rank, fit.mean_fit)
    return fit


def fit_csv(fits: List[LayerFit]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(['layer', 'rank', 'filters', 'mean_fit', 'min_fit',
                     'max_iterations', 'converged'])
    for f in fits:
        writer.writerow([f.index, f.rank, f.filters, f"{f.mean_fit:.8f}",
                         f"{f.min_fit:.8f}", f.max_iterations,
                         int(f.all_converged)])
    return out.getvalue()
