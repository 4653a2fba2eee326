"""Latent block model bookkeeping: partitions, weights, complete-data log-likelihood.

All likelihood arithmetic stays in log space; cell-level log marginal
densities live in a cache array of shape (n, d, K, L) filled by the
marginalization step. Row and column labels are 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, ShapeError

WEIGHT_FLOOR = 1e-10


@dataclass
class CoPartition:
    """Row labels z (1..K), column labels w (1..L) and mixture weights pi, rho."""

    z: np.ndarray
    w: np.ndarray
    pi: np.ndarray
    rho: np.ndarray

    def __post_init__(self) -> None:
        self.z = np.asarray(self.z, dtype=int)
        self.w = np.asarray(self.w, dtype=int)
        self.pi = np.asarray(self.pi, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        if self.z.ndim != 1 or self.w.ndim != 1:
            raise ShapeError("labels must be 1-d arrays")
        K, L = self.pi.size, self.rho.size
        if self.z.size and (self.z.min() < 1 or self.z.max() > K):
            raise ShapeError(f"row labels must lie in 1..{K}")
        if self.w.size and (self.w.min() < 1 or self.w.max() > L):
            raise ShapeError(f"column labels must lie in 1..{L}")
        for name, wts in (("pi", self.pi), ("rho", self.rho)):
            if np.any(wts <= 0) or abs(wts.sum() - 1.0) > 1e-10:
                raise ConfigError(f"{name} must be strictly positive and sum to 1")

    @property
    def K(self) -> int:
        return self.pi.size

    @property
    def L(self) -> int:
        return self.rho.size


def _check_cache(cache: np.ndarray, part: CoPartition) -> None:
    if cache.ndim != 4:
        raise ShapeError(f"cache must be 4-d (n, d, K, L), got shape {cache.shape}")
    n, d, K, L = cache.shape
    if part.z.size != n or part.w.size != d or part.K != K or part.L != L:
        raise ShapeError(
            f"cache shape {cache.shape} does not match partition "
            f"(n={part.z.size}, d={part.w.size}, K={part.K}, L={part.L})"
        )


def log_weights(weights: np.ndarray) -> np.ndarray:
    """Log weights with the 1e-10 floor applied before taking logs."""
    return np.log(np.maximum(weights, WEIGHT_FLOOR))


def complete_loglik(cache: np.ndarray, part: CoPartition) -> float:
    """Complete-data log-likelihood: weight terms plus assigned-block cell terms."""
    _check_cache(cache, part)
    n, d = cache.shape[:2]
    zi = part.z - 1
    wj = part.w - 1
    cell_terms = cache[np.arange(n)[:, None], np.arange(d)[None, :], zi[:, None], wj[None, :]]
    return float(
        log_weights(part.pi)[zi].sum()
        + log_weights(part.rho)[wj].sum()
        + cell_terms.sum()
    )


def row_conditionals(cache: np.ndarray, w: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Posterior row-label probabilities given the column labels, shape (n, K).

    Row i, entry k is proportional to pi_k * exp(sum_j cache[i, j, k, w_j]);
    normalization runs through log-sum-exp so rows sum to 1 exactly enough.
    """
    n, d, K, L = cache.shape
    w = np.asarray(w, dtype=int)
    if w.size != d:
        raise ShapeError(f"column labels length {w.size} != d = {d}")
    picked = np.take_along_axis(
        cache, (w - 1)[None, :, None, None], axis=3
    )[..., 0]  # (n, d, K)
    logits = log_weights(pi)[None, :] + picked.sum(axis=1)
    return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))


def col_conditionals(cache: np.ndarray, z: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Posterior column-label probabilities given the row labels, shape (d, L)."""
    n, d, K, L = cache.shape
    z = np.asarray(z, dtype=int)
    if z.size != n:
        raise ShapeError(f"row labels length {z.size} != n = {n}")
    picked = np.take_along_axis(
        cache, (z - 1)[:, None, None, None], axis=2
    )[:, :, 0, :]  # (n, d, L)
    logits = log_weights(rho)[None, :] + picked.sum(axis=0)
    return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
