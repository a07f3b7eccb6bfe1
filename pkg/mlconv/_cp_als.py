# SPDX-License-Identifier: MIT

"""CP decomposition of 3-way tensors by alternating least squares."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from ._constants import CP_ALS_MAX_ITERS, CP_ALS_TOL
from ._exceptions import DecompositionError
from ._tensor import KruskalFactors, khatri_rao, kruskal_reconstruct, unfold

logger = logging.getLogger(__name__)

_TINY = np.finfo(np.float64).tiny

RIDGE = 1e-10


@dataclass(frozen=True)
class CpAlsReport:
    iterations_run: int
    final_fit: float
    converged: bool
    fit_history: Tuple[float, ...] = field(default=())
    regularized: bool = False


def _initial_factors(x: np.ndarray, rank: int,
                     rng: np.random.Generator) -> List[np.ndarray]:
    """Leading left singular vectors of each unfolding, padded with
    seeded Gaussian columns where the mode is smaller than the rank."""
    factors = []
    for mode in range(x.ndim):
        u, _, _ = scipy.linalg.svd(unfold(x, mode), full_matrices=False)
        u = u[:, :rank]
        missing = rank - u.shape[1]
        if missing > 0:
            extra = rng.standard_normal((x.shape[mode], missing))
            extra /= np.linalg.norm(extra, axis=0, keepdims=True)
            u = np.hstack([u, extra])
        factors.append(u.astype(np.float64, copy=True))
    return factors


def _solve_normal_equations(gram: np.ndarray,
                            rhs: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Solves ``gram @ X.T = rhs.T``. Falls back to a small ridge when the
    gram matrix is not positive definite."""
    try:
        c = scipy.linalg.cho_factor(gram, overwrite_a=False)
        return scipy.linalg.cho_solve(c, rhs.T, overwrite_b=False).T, False
    except (scipy.linalg.LinAlgError, ValueError):
        ridge = RIDGE * max(float(np.trace(gram)), 1.0)
        regularized = gram + ridge * np.eye(gram.shape[0])
        logger.warning("singular normal equations, adding ridge %.3g", ridge)
        solution = scipy.linalg.solve(regularized, rhs.T, assume_a='sym')
        return solution.T, True


def _absorb_norms(factors: List[np.ndarray]) -> None:
    """Moves the column norms of the first two factors into the third."""
    for mode in (0, 1):
        norms = np.linalg.norm(factors[mode], axis=0)
        norms[norms == 0.0] = 1.0
        factors[mode] /= norms
        factors[2] *= norms


def cp_als(target: np.ndarray,
           rank: int,
           max_iters: int = CP_ALS_MAX_ITERS,
           tol: float = CP_ALS_TOL,
           seed: Optional[int] = 0) -> Tuple[KruskalFactors, CpAlsReport]:
    """Fits ``target ≈ sum_r w1(r) ∘ w2(r) ∘ w3(r)``.

    Stops when the fit ``1 - ‖target - estimate‖ / ‖target‖`` changes by
    less than `tol` relative to the previous sweep, or after `max_iters`
    sweeps.
    """
    x = np.asarray(target, dtype=np.float64)
    if x.ndim != 3:
        raise DecompositionError(
            f"CP-ALS expects a 3-way tensor, got order {x.ndim}")
    if rank < 1:
        raise DecompositionError(f"rank must be at least 1, got {rank}")
    if max_iters < 1:
        raise DecompositionError(f"max_iters must be positive, got {max_iters}")
    if not tol > 0:
        raise DecompositionError(f"tol must be positive, got {tol}")
    if not np.all(np.isfinite(x)):
        raise DecompositionError("target contains non-finite values")

    norm_x = float(np.linalg.norm(x))
    if norm_x == 0.0:
        zeros = KruskalFactors(*(np.zeros((size, rank)) for size in x.shape))
        return zeros, CpAlsReport(iterations_run=0, final_fit=1.0,
                                  converged=True)

    factors = _initial_factors(x, rank, np.random.default_rng(seed))
    unfoldings = [unfold(x, mode) for mode in range(3)]
    history: List[float] = []
    regularized = False
    converged = False

    for _ in range(max_iters):
        for mode in range(3):
            a, b = (factors[m] for m in range(3) if m != mode)
            gram = (a.T @ a) * (b.T @ b)
            mttkrp = unfoldings[mode] @ khatri_rao(a, b)
            factors[mode], ridged = _solve_normal_equations(gram, mttkrp)
            regularized = regularized or ridged
        _absorb_norms(factors)

        estimate = kruskal_reconstruct(KruskalFactors(*factors))
        fit = max(0.0, 1.0 - float(np.linalg.norm(x - estimate)) / norm_x)
        history.append(fit)
        if len(history) > 1 and abs(history[-1] - history[-2]) \
                <= tol * max(history[-2], _TINY):
            converged = True
            break

    report = CpAlsReport(iterations_run=len(history),
                         final_fit=history[-1],
                         converged=converged,
                         fit_history=tuple(history),
                         regularized=regularized)
    logger.debug("cp_als rank=%d: %d sweeps, fit %.8f", rank,
                 report.iterations_run, report.final_fit)
    return KruskalFactors(*factors), report
