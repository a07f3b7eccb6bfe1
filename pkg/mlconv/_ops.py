# SPDX-License-Identifier: MIT

"""Forward and backward maps of every layer kind as pure functions.

Activations are channels-last, ``(B, X, Y, C)``. Convolutions use stride 1
and zero "same" padding: ``(k - 1) // 2`` before and ``k // 2`` after along
an axis with kernel extent ``k``. Kernels are ``(kh, kw, C, N)``.

Convolutions are evaluated by shifting the padded input once per kernel
offset and multiplying by the matching ``(C, N)`` slice, so the loop order
(and with it the floating-point summation order) is fixed.
"""

from typing import NamedTuple, Optional, Tuple

import numpy as np

from ._exceptions import MlconvError, TensorShapeError


def same_padding(extent: int) -> Tuple[int, int]:
    return (extent - 1) // 2, extent // 2


def _pad(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    return np.pad(x, ((0, 0), same_padding(kh), same_padding(kw), (0, 0)))


def _unpad(xp: np.ndarray, kh: int, kw: int, h: int, w: int) -> np.ndarray:
    top, left = same_padding(kh)[0], same_padding(kw)[0]
    return xp[:, top:top + h, left:left + w, :]


def _check_activation(x: np.ndarray, channels: int, what: str) -> None:
    if x.ndim != 4:
        raise TensorShapeError(
            f"{what} expects a (B, X, Y, C) activation, got shape {x.shape}")
    if x.shape[3] != channels:
        raise TensorShapeError(
            f"{what} expects {channels} input channels, got {x.shape[3]}")


# convolution #################################################################

def conv2d_forward(x: np.ndarray, w: np.ndarray,
                   b: Optional[np.ndarray] = None) -> np.ndarray:
    kh, kw, c, n = w.shape
    _check_activation(x, c, "convolution")
    batch, h, width, _ = x.shape
    xp = _pad(x, kh, kw)
    out = np.zeros((batch, h, width, n), dtype=np.result_type(x, w))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + h, j:j + width, :] @ w[i, j]
    if b is not None:
        out += b
    return out


def conv2d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray
                    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dw, db) for ``y = conv2d_forward(x, w, b)``."""
    kh, kw, c, n = w.shape
    batch, h, width, _ = x.shape
    if dy.shape != (batch, h, width, n):
        raise TensorShapeError(
            f"upstream gradient of shape {dy.shape} does not match "
            f"the convolution output {(batch, h, width, n)}")
    xp = _pad(x, kh, kw)
    dxp = np.zeros_like(xp, dtype=np.result_type(x, dy))
    dw = np.empty_like(w, dtype=np.result_type(w, dy))
    flat_dy = dy.reshape(-1, n)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i:i + h, j:j + width, :].reshape(-1, c)
            dw[i, j] = patch.T @ flat_dy
            dxp[:, i:i + h, j:j + width, :] += dy @ w[i, j].T
    return _unpad(dxp, kh, kw, h, width), dw, dy.sum(axis=(0, 1, 2))


def depthwise_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-map convolution with kernel ``w`` of shape (kh, kw, M)."""
    kh, kw, m = w.shape
    _check_activation(x, m, "depthwise convolution")
    _, h, width, _ = x.shape
    xp = _pad(x, kh, kw)
    out = np.zeros(x.shape, dtype=np.result_type(x, w))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + h, j:j + width, :] * w[i, j]
    return out


def depthwise_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray
                       ) -> Tuple[np.ndarray, np.ndarray]:
    kh, kw, _ = w.shape
    _, h, width, _ = x.shape
    xp = _pad(x, kh, kw)
    dxp = np.zeros_like(xp, dtype=np.result_type(x, dy))
    dw = np.empty_like(w, dtype=np.result_type(w, dy))
    for i in range(kh):
        for j in range(kw):
            dw[i, j] = (xp[:, i:i + h, j:j + width, :] * dy).sum(axis=(0, 1, 2))
            dxp[:, i:i + h, j:j + width, :] += dy * w[i, j]
    return _unpad(dxp, kh, kw, h, width), dw


# multilinear convolution #####################################################
#
# Factors of N filters of rank R are stored as w1 (d, N, R), w2 (d, N, R)
# and w3 (C, N, R); map n * R + r of the intermediate stages belongs to
# rank r of filter n.

class Scheme1Stages(NamedTuple):
    projected: np.ndarray  # after mode-3, (B, X, Y, N*R)
    vertical: np.ndarray   # after mode-1, (B, X, Y, N*R)
    output: np.ndarray     # (B, X, Y, N)


def _check_factors(w1: np.ndarray, w2: np.ndarray, w3: np.ndarray) -> None:
    if not (w1.ndim == w2.ndim == w3.ndim == 3) \
            or w1.shape != w2.shape or w3.shape[1:] != w1.shape[1:]:
        raise TensorShapeError(
            f"inconsistent factor shapes {w1.shape}, {w2.shape}, {w3.shape}")


def mlconv_kernel(w1: np.ndarray, w2: np.ndarray,
                  w3: np.ndarray) -> np.ndarray:
    """Dense (d, d, C, N) kernel of the Kruskal-form filters."""
    _check_factors(w1, w2, w3)
    return np.einsum('inr,jnr,cnr->ijcn', w1, w2, w3, optimize=True)


def mlconv_scheme1_stages(x: np.ndarray, w1: np.ndarray, w2: np.ndarray,
                          w3: np.ndarray, b: np.ndarray) -> Scheme1Stages:
    _check_factors(w1, w2, w3)
    d, n, r = w1.shape
    c = w3.shape[0]
    _check_activation(x, c, "MLconv")
    batch, h, width, _ = x.shape
    projected = x @ w3.reshape(c, n * r)
    vertical = depthwise_forward(projected, w1.reshape(d, 1, n * r))
    horizontal = depthwise_forward(vertical, w2.reshape(1, d, n * r))
    output = horizontal.reshape(batch, h, width, n, r).sum(axis=4) + b
    return Scheme1Stages(projected, vertical, output)


def mlconv_forward_scheme1(x: np.ndarray, w1: np.ndarray, w2: np.ndarray,
                           w3: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise projection to N*R maps, per-map d×1 then 1×d
    convolutions, then a sum over the rank index."""
    return mlconv_scheme1_stages(x, w1, w2, w3, b).output


def mlconv_backward_scheme1(x: np.ndarray, w1: np.ndarray, w2: np.ndarray,
                            w3: np.ndarray, dy: np.ndarray,
                            stages: Optional[Scheme1Stages] = None):
    """Returns (dx, dw1, dw2, dw3, db)."""
    d, n, r = w1.shape
    c = w3.shape[0]
    if stages is None:
        stages = mlconv_scheme1_stages(x, w1, w2, w3, np.zeros(n, x.dtype))
    batch, h, width, _ = x.shape
    if dy.shape != (batch, h, width, n):
        raise TensorShapeError(
            f"upstream gradient of shape {dy.shape} does not match "
            f"the MLconv output {(batch, h, width, n)}")
    d_horizontal = np.broadcast_to(
        dy[..., np.newaxis], (batch, h, width, n, r)).reshape(
        batch, h, width, n * r)
    d_vertical, dw2 = depthwise_backward(
        stages.vertical, w2.reshape(1, d, n * r), d_horizontal)
    d_projected, dw1 = depthwise_backward(
        stages.projected, w1.reshape(d, 1, n * r), d_vertical)
    dx = d_projected @ w3.reshape(c, n * r).T
    dw3 = x.reshape(-1, c).T @ d_projected.reshape(-1, n * r)
    return (dx,
            dw1.reshape(d, n, r),
            dw2.reshape(d, n, r),
            dw3.reshape(c, n, r),
            dy.sum(axis=(0, 1, 2)))


def mlconv_forward_scheme2(x: np.ndarray, w1: np.ndarray, w2: np.ndarray,
                           w3: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Reconstructs the dense kernels, then convolves."""
    return conv2d_forward(x, mlconv_kernel(w1, w2, w3), b)


def mlconv_backward_scheme2(x: np.ndarray, w1: np.ndarray, w2: np.ndarray,
                            w3: np.ndarray, dy: np.ndarray,
                            kernel: Optional[np.ndarray] = None):
    """Returns (dx, dw1, dw2, dw3, db)."""
    if kernel is None:
        kernel = mlconv_kernel(w1, w2, w3)
    dx, dk, db = conv2d_backward(x, kernel, dy)
    dw1 = np.einsum('ijcn,jnr,cnr->inr', dk, w2, w3, optimize=True)
    dw2 = np.einsum('ijcn,inr,cnr->jnr', dk, w1, w3, optimize=True)
    dw3 = np.einsum('ijcn,inr,jnr->cnr', dk, w1, w2, optimize=True)
    return dx, dw1, dw2, dw3, db


# low-rank (vertical then horizontal) convolution #############################

def lrconv_kernel(v: np.ndarray, hz: np.ndarray) -> np.ndarray:
    """Composed (d, d, C, N) kernel of a vertical (d, 1, C, K) and a
    horizontal (1, d, K, N) bank."""
    return np.einsum('ick,jkn->ijcn', v[:, 0], hz[0], optimize=True)


def lrconv_forward(x: np.ndarray, v: np.ndarray, hz: np.ndarray,
                   b: np.ndarray) -> np.ndarray:
    return conv2d_forward(conv2d_forward(x, v), hz, b)


def lrconv_backward(x: np.ndarray, v: np.ndarray, hz: np.ndarray,
                    dy: np.ndarray, vertical: Optional[np.ndarray] = None):
    """Returns (dx, dv, dhz, db)."""
    if vertical is None:
        vertical = conv2d_forward(x, v)
    d_vertical, dhz, db = conv2d_backward(vertical, hz, dy)
    dx, dv, _ = conv2d_backward(x, v, d_vertical)
    return dx, dv, dhz, db


# normalization and activations ###############################################

class BatchNormCache(NamedTuple):
    normalized: np.ndarray
    inv_std: np.ndarray
    training: bool


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      running_mean: np.ndarray, running_var: np.ndarray,
                      training: bool, epsilon: float, momentum: float):
    """Returns (y, cache, new_running_mean, new_running_var).

    Running statistics follow ``running = momentum * running +
    (1 - momentum) * batch``; the batch variance is the biased one.
    """
    _check_activation(x, gamma.shape[0], "batch normalization")
    if training:
        if x.shape[0] == 0:
            raise TensorShapeError("batch normalization needs a non-empty "
                                   "batch in training mode")
        mean = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        running_mean = momentum * running_mean + (1.0 - momentum) * mean
        running_var = momentum * running_var + (1.0 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + epsilon)
    normalized = (x - mean) * inv_std
    y = gamma * normalized + beta
    return (y.astype(x.dtype, copy=False),
            BatchNormCache(normalized, inv_std, training),
            running_mean, running_var)


def batchnorm_backward(gamma: np.ndarray, cache: BatchNormCache,
                       dy: np.ndarray):
    """Returns (dx, dgamma, dbeta)."""
    axes = (0, 1, 2)
    dgamma = (dy * cache.normalized).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    d_normalized = dy * gamma
    if not cache.training:
        return d_normalized * cache.inv_std, dgamma, dbeta
    m = dy.shape[0] * dy.shape[1] * dy.shape[2]
    dx = (cache.inv_std / m) * (
            m * d_normalized
            - d_normalized.sum(axis=axes)
            - cache.normalized * (d_normalized * cache.normalized).sum(axis=axes))
    return dx, dgamma, dbeta


def lrelu(x: np.ndarray, alpha: float) -> np.ndarray:
    return np.where(x >= 0, x, alpha * x)


def lrelu_backward(x: np.ndarray, alpha: float, dy: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, dy, alpha * dy)


def maxpool2x2(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (y, argmax); argmax holds the winning position 0..3 of each
    2×2 window in row-major order, first maximum on ties."""
    if x.ndim != 4:
        raise TensorShapeError(f"max pooling expects (B, X, Y, C), "
                               f"got shape {x.shape}")
    batch, h, w, c = x.shape
    if h % 2 or w % 2:
        raise TensorShapeError(
            f"2x2 max pooling needs even spatial sizes, got {h}x{w}")
    windows = x.reshape(batch, h // 2, 2, w // 2, 2, c) \
        .transpose(0, 1, 3, 5, 2, 4).reshape(batch, h // 2, w // 2, c, 4)
    argmax = windows.argmax(axis=4)
    y = np.take_along_axis(windows, argmax[..., np.newaxis], axis=4)[..., 0]
    return y, argmax


def maxpool2x2_backward(argmax: np.ndarray, dy: np.ndarray) -> np.ndarray:
    batch, h2, w2, c = dy.shape
    routed = (np.arange(4) == argmax[..., np.newaxis]) * dy[..., np.newaxis]
    return routed.reshape(batch, h2, w2, c, 2, 2) \
        .transpose(0, 1, 4, 2, 5, 3).reshape(batch, h2 * 2, w2 * 2, c)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(1, 2))


def global_avg_pool_backward(input_shape: Tuple[int, ...],
                             dy: np.ndarray) -> np.ndarray:
    _, h, w, _ = input_shape
    return np.broadcast_to(dy[:, np.newaxis, np.newaxis, :] / (h * w),
                           input_shape).copy()


def dropout(x: np.ndarray, p: float, training: bool,
            rng: np.random.Generator) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverted dropout. Returns (y, mask); the mask is None when the map
    is the identity."""
    if not 0.0 <= p < 1.0:
        raise MlconvError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * mask, mask


# loss ########################################################################

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray,
                 labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch.

    `logits` is (B, K) and `labels` holds B class indices; a single vector
    with a scalar label is accepted too. Returns (loss, probs).
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim == 1:
        logits, labels = logits[np.newaxis, :], labels.reshape(1)
    classes = logits.shape[1]
    if labels.shape != (logits.shape[0],):
        raise TensorShapeError(
            f"{labels.shape[0] if labels.ndim else 1} labels for "
            f"{logits.shape[0]} samples")
    if np.any(labels < 0) or np.any(labels >= classes):
        raise MlconvError(f"labels must lie in [0, {classes})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    log_p = z[np.arange(len(labels)), labels] - log_norm
    return float(-log_p.mean()), softmax(logits)


def softmax_xent_backward(probs: np.ndarray,
                          labels: np.ndarray) -> np.ndarray:
    grad = probs.copy()
    grad[np.arange(len(labels)), labels] -= 1.0
    return grad / len(labels)
