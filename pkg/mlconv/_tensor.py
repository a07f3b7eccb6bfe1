# SPDX-License-Identifier: MIT

"""Dense tensor operations.

A tensor is a ``numpy.ndarray`` in C order: the flat data runs over the
index tuple ``(i_0, ..., i_{K-1})`` with the last index varying fastest.
Modes are 0-based axes.

The mode-k unfolding keeps that order for the remaining indices: column
``c`` of ``unfold(x, k)`` is the fiber at the index tuple obtained by
reading ``c`` in mixed radix over the shape with axis ``k`` removed, last
axis fastest. ``khatri_rao(a, b)`` flattens ``(i, j)`` as ``i * J + j``,
which makes ``unfold(x, 0) == A @ khatri_rao(B, C).T`` for a Kruskal
tensor with factors ``A, B, C``.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from ._exceptions import TensorShapeError


def _check_mode(x: np.ndarray, mode: int) -> None:
    if not 0 <= mode < x.ndim:
        raise TensorShapeError(
            f"mode {mode} is out of range for a tensor of order {x.ndim}")


def tensor_element(x: np.ndarray, index: Sequence[int]) -> float:
    """Bounds-checked element access. Negative indices are rejected
    instead of wrapping around."""
    if len(index) != x.ndim:
        raise TensorShapeError(
            f"index {tuple(index)} has {len(index)} components, "
            f"tensor has order {x.ndim}")
    for axis, (i, size) in enumerate(zip(index, x.shape)):
        if not 0 <= i < size:
            raise TensorShapeError(
                f"index {i} is out of range [0, {size}) on axis {axis}")
    return float(x[tuple(index)])


def unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Mode-`mode` matricization of shape ``(I_mode, prod(other sizes))``."""
    _check_mode(x, mode)
    return np.moveaxis(x, mode, 0).reshape(x.shape[mode], -1)


def refold(matrix: np.ndarray, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of `unfold` for a tensor of the given shape."""
    shape = tuple(shape)
    if not 0 <= mode < len(shape):
        raise TensorShapeError(
            f"mode {mode} is out of range for a tensor of order {len(shape)}")
    rest = shape[:mode] + shape[mode + 1:]
    if matrix.shape != (shape[mode], int(np.prod(rest, dtype=np.int64))):
        raise TensorShapeError(
            f"matrix of shape {matrix.shape} cannot be refolded "
            f"into {shape} along mode {mode}")
    return np.moveaxis(matrix.reshape((shape[mode],) + rest), 0, mode)


def mode_product(x: np.ndarray, mode: int, w: np.ndarray,
                 squeeze: bool = False) -> np.ndarray:
    """Mode-`mode` product ``x ×_mode w`` for ``w`` of shape (J, I_mode).

    A vector ``w`` of length I_mode is treated as a 1×I_mode matrix and
    contracts the mode to size 1. With `squeeze` the contracted size-1 mode
    is dropped from the result.
    """
    _check_mode(x, mode)
    w = np.asarray(w)
    if w.ndim == 1:
        w = w[np.newaxis, :]
    if w.ndim != 2 or w.shape[1] != x.shape[mode]:
        raise TensorShapeError(
            f"cannot multiply mode {mode} of size {x.shape[mode]} "
            f"by a matrix of shape {w.shape}")
    result = np.moveaxis(np.tensordot(w, x, axes=(1, mode)), 0, mode)
    if squeeze and result.shape[mode] == 1:
        result = np.squeeze(result, axis=mode)
    return result


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product of (I×R) and (J×R) matrices."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise TensorShapeError(
            f"Khatri-Rao product needs matrices with equal column counts, "
            f"got {a.shape} and {b.shape}")
    return (a[:, np.newaxis, :] * b[np.newaxis, :, :]).reshape(
        a.shape[0] * b.shape[0], a.shape[1])


@dataclass(frozen=True)
class KruskalFactors:
    """Rank-R factors of a 3-way tensor; column r of each matrix is
    w_k(r). Mode order is (rows, columns, channels) of a kernel."""
    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray

    def __post_init__(self):
        for name in ('w1', 'w2', 'w3'):
            if getattr(self, name).ndim != 2:
                raise TensorShapeError(f"factor {name} must be a matrix")
        ranks = {self.w1.shape[1], self.w2.shape[1], self.w3.shape[1]}
        if len(ranks) != 1:
            raise TensorShapeError(
                f"factor matrices disagree on rank: "
                f"{self.w1.shape}, {self.w2.shape}, {self.w3.shape}")
        if self.rank < 1:
            raise TensorShapeError("rank must be at least 1")

    @property
    def rank(self) -> int:
        return self.w1.shape[1]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.w1.shape[0], self.w2.shape[0], self.w3.shape[0]

    def matrices(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.w1, self.w2, self.w3


def kruskal_reconstruct(f: KruskalFactors) -> np.ndarray:
    """W[i, j, c] = sum_r w1[i, r] * w2[j, r] * w3[c, r]."""
    return np.einsum('ir,jr,cr->ijc', f.w1, f.w2, f.w3)


def multilinear_response(patch: np.ndarray, f: KruskalFactors) -> float:
    """Evaluates sum_r patch ×_1 w1(r)ᵀ ×_2 w2(r)ᵀ ×_3 w3(r)ᵀ by mode
    products, channel mode first."""
    if patch.shape != f.shape:
        raise TensorShapeError(
            f"patch of shape {patch.shape} does not match "
            f"factors of shape {f.shape}")
    total = 0.0
    for r in range(f.rank):
        y = mode_product(patch, 2, f.w3[:, r], squeeze=True)
        y = mode_product(y, 0, f.w1[:, r], squeeze=True)
        y = mode_product(y, 0, f.w2[:, r], squeeze=True)
        total += float(y)
    return total
