"""Sparsifying compressors and the error-compensation memory.

Every compressor returns a :class:`SparseGradient` holding index-sorted
``(index, value)`` pairs. Values are copied from the input untouched; exact
zeros are never carried.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import gradmodel
from .errors import DimMismatch, InvalidInput, InvalidK

# DGC ranks the sample at this multiple of the target count, so the applied
# threshold tends to overshoot and the exact top-k truncation can trim it.
DGC_OVERSAMPLE = 1.25


@dataclass
class SparseGradient:
    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise InvalidInput("indices and values must be 1-D arrays of equal length")
        if self.indices.size > self.dim:
            raise InvalidInput("more entries than the dimension")

    def __len__(self):
        return int(self.indices.size)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def densify(self) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.float64)
        out[self.indices] = self.values
        return out

    def validate(self) -> None:
        """Raise if the structural invariants do not hold."""
        idx = self.indices
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise InvalidInput("index out of range")
            if np.any(np.diff(idx) <= 0):
                raise InvalidInput("indices must be strictly increasing")
        if np.any(self.values == 0):
            raise InvalidInput("sparse gradient carries a zero value")


@dataclass
class CompressionStats:
    k_target: int
    k_hat: int
    threshold: float
    elapsed_ns: int = 0

    @property
    def ratio_quality(self) -> float:
        """Achieved over target count, ``k_hat / k``."""
        return self.k_hat / self.k_target if self.k_target else math.nan


def k_from_ratio(delta: float, d: int) -> int:
    """``ceil(delta * d)``, ignoring the last-ulp noise of the product."""
    if not 0.0 < delta <= 1.0:
        raise InvalidK(f"ratio must lie in (0, 1], got {delta}")
    k = math.ceil(delta * d * (1.0 - 1e-12))
    return min(max(k, 1), d)


def _check_k(k, d) -> int:
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= d:
        raise InvalidK(f"k must be an integer in [1, {d}], got {k}")
    return int(k)


def _gather(g: np.ndarray, idx: np.ndarray) -> SparseGradient:
    return SparseGradient(idx, g[idx], g.size)


def _topk_indices(absg: np.ndarray, k: int) -> np.ndarray:
    # Sorted indices of the k largest entries, ties going to the smaller index.
    d = absg.size
    if k >= d:
        return np.flatnonzero(absg > 0)
    kth = np.partition(absg, d - k)[d - k]
    if kth == 0.0:
        return np.flatnonzero(absg > 0)
    mask = absg > kth
    short = k - int(np.count_nonzero(mask))
    if short:
        mask[np.flatnonzero(absg == kth)[:short]] = True
    return np.flatnonzero(mask)


def topk_exact(grad, k: int) -> tuple[SparseGradient, CompressionStats]:
    """Keep the ``k`` largest-magnitude entries (lower index wins ties).

    Uses introselect partitioning, O(d) on average. Returns fewer than ``k``
    entries only when the input has fewer than ``k`` nonzeros.
    """
    t0 = time.perf_counter_ns()
    g = gradmodel.as_gradient(grad)
    k = _check_k(k, g.size)
    absg = np.abs(g)
    idx = _topk_indices(absg, k)
    sparse = _gather(g, idx)
    eta = float(absg[idx].min()) if idx.size else 0.0
    return sparse, CompressionStats(k, sparse.nnz, eta, time.perf_counter_ns() - t0)


def randk(grad, k: int, seed: int) -> SparseGradient:
    """Uniform sample of ``k`` distinct indices; a pure function of ``seed``."""
    g = gradmodel.as_gradient(grad)
    k = _check_k(k, g.size)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(g.size, size=k, replace=False))
    idx = idx[g[idx] != 0]
    return _gather(g, idx)


def _threshold_abs(g: np.ndarray, absg: np.ndarray, eta: float) -> np.ndarray:
    if eta > 0.0:
        return np.flatnonzero(absg >= eta)
    return np.flatnonzero(absg > 0.0)


def apply_threshold(grad, eta: float, k_target: int = 0) -> tuple[SparseGradient, CompressionStats]:
    """Keep every entry with ``|g_j| >= eta``; ``eta = 0`` keeps all nonzeros."""
    t0 = time.perf_counter_ns()
    eta = float(eta)
    if not eta >= 0.0:
        raise InvalidInput(f"threshold must be >= 0, got {eta}")
    g = gradmodel.as_gradient(grad)
    idx = _threshold_abs(g, np.abs(g), eta)
    sparse = _gather(g, idx)
    return sparse, CompressionStats(k_target, sparse.nnz, eta, time.perf_counter_ns() - t0)


def dgc_estimate(grad, delta: float, sample_fraction: float = 0.01, seed: int = 0,
                 oversample: float = DGC_OVERSAMPLE) -> tuple[SparseGradient, CompressionStats]:
    """Sampled-threshold top-k in the style of Deep Gradient Compression.

    Top-k over a random subset (without replacement) gives the candidate
    threshold; if applying it selects more than ``k`` entries, an exact top-k
    over the selection trims the result to ``k``. Undershoot is kept as is.
    """
    t0 = time.perf_counter_ns()
    g = gradmodel.as_gradient(grad)
    d = g.size
    k = k_from_ratio(delta, d)
    if not 0.0 < sample_fraction <= 1.0:
        raise InvalidInput(f"sample_fraction must lie in (0, 1], got {sample_fraction}")
    absg = np.abs(g)
    n_sample = max(1, math.ceil(sample_fraction * d))
    if n_sample >= d:
        sample = absg
    else:
        rng = np.random.default_rng(seed)
        sample = absg[rng.choice(d, size=n_sample, replace=False)]
    k_sample = min(max(1, math.ceil(oversample * k * sample.size / d)), sample.size)
    eta = float(np.partition(sample, sample.size - k_sample)[sample.size - k_sample])
    idx = _threshold_abs(g, absg, eta)
    if idx.size > k:
        idx = idx[_topk_indices(absg[idx], k)]
        eta = float(absg[idx].min())
    sparse = _gather(g, idx)
    return sparse, CompressionStats(k, sparse.nnz, eta, time.perf_counter_ns() - t0)


def gaussian_estimate(grad, delta: float) -> tuple[SparseGradient, CompressionStats]:
    """Single-pass baseline: threshold from a Gaussian fit of the signed gradient."""
    t0 = time.perf_counter_ns()
    g = gradmodel.as_gradient(grad)
    k = k_from_ratio(delta, g.size)
    params = gradmodel._fit_gaussian(g)
    eta = gradmodel.threshold_from_params(params, delta)
    idx = _threshold_abs(g, np.abs(g), eta)
    sparse = _gather(g, idx)
    return sparse, CompressionStats(k, sparse.nnz, eta, time.perf_counter_ns() - t0)


class ECMemory:
    """Error-compensation residual for one worker.

    Single owner: one worker mutates a given memory.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise InvalidInput("dimension must be >= 1")
        self.residual = np.zeros(dim, dtype=np.float64)

    @property
    def dim(self) -> int:
        return self.residual.size


def ec_apply(grad, memory: ECMemory) -> np.ndarray:
    """Return ``grad + residual`` without touching the memory."""
    g = gradmodel.as_gradient(grad)
    if g.size != memory.dim:
        raise DimMismatch(f"gradient has dim {g.size}, memory has {memory.dim}")
    return g + memory.residual


def ec_update(memory: ECMemory, compensated, sent: SparseGradient) -> None:
    """Store what was not sent: ``residual = compensated - densify(sent)``."""
    c = np.asarray(compensated, dtype=np.float64).reshape(-1)
    if c.size != memory.dim or sent.dim != memory.dim:
        raise DimMismatch(f"memory dim {memory.dim}, compensated {c.size}, sent {sent.dim}")
    residual = c - sent.densify()
    memory.residual = residual
