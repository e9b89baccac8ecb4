"""Gaussian-kernel similarity between embedding vectors.

This is the soft-unification score: two symbols match with strength
exp(-||u - v||^2 / (2 mu^2)), which is 1 exactly when the embeddings
coincide and decays monotonically with Euclidean distance. Because the
kernel is a monotone transform of negative squared distance, ranking
candidates by ascending L2 distance is the same as ranking them by
descending kernel score, which is what the nearest-neighbour pruning in
:mod:`softchain.nns` relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KernelConfig:
    """Bandwidth of the Gaussian kernel. Must be positive."""

    bandwidth: float = 1.0

    def __post_init__(self) -> None:
        if not self.bandwidth > 0:
            raise ValueError(f"kernel bandwidth must be positive, got {self.bandwidth}")


DEFAULT_KERNEL = KernelConfig()


def _check_dims(u: np.ndarray, v: np.ndarray) -> None:
    if u.shape[-1] != v.shape[-1]:
        raise ValueError(f"dimension mismatch: {u.shape[-1]} vs {v.shape[-1]}")


def kernel(u: np.ndarray, v: np.ndarray, cfg: KernelConfig = DEFAULT_KERNEL):
    """Similarity score in (0, 1].

    Accepts single vectors or broadcastable stacks of vectors; the
    reduction runs over the last axis. A scalar float is returned for a
    pair of 1-d inputs.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_dims(u, v)
    diff = u - v
    d2 = np.sum(diff * diff, axis=-1)
    out = np.exp(-d2 / (2.0 * cfg.bandwidth * cfg.bandwidth))
    if out.ndim == 0:
        return float(out)
    return out


def kernel_grad(u: np.ndarray, v: np.ndarray, cfg: KernelConfig = DEFAULT_KERNEL):
    """Analytic gradients (dk/du, dk/dv) of :func:`kernel`.

    dk/du = -k (u - v) / mu^2 and dk/dv is its negation, so the two
    gradients always sum to the zero vector.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_dims(u, v)
    k = kernel(u, v, cfg)
    scale = k / (cfg.bandwidth * cfg.bandwidth)
    gu = -scale * (u - v)
    return gu, -gu
