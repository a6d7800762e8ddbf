"""Name-based construction of compressors with a uniform call signature.

A compressor is called as ``comp(grad, iteration)`` and returns
``(SparseGradient, CompressionStats)``. Stateful ones (SIDCo) keep their state
on the instance, so build one per worker.
"""
from __future__ import annotations

import numpy as np

from . import sparsify
from .errors import InvalidInput
from .sidco import Flavor, SidcoCompressor, SidcoConfig

SIDCO_FLAVORS = {
    "sidco_e": Flavor.EXPONENTIAL,
    "sidco_gp": Flavor.GAMMA_GPD,
    "sidco_p": Flavor.GPD,
}
COMPRESSORS = ("none", "topk", "randk", "threshold", "dgc", "gaussian", *SIDCO_FLAVORS)

_SIDCO_OPTIONS = {"first_stage_ratio", "eps_high", "eps_low", "window", "max_stages"}
_DGC_OPTIONS = {"sample_fraction", "oversample"}


def _identity(grad, iteration=0):
    g = np.asarray(grad, dtype=np.float64)
    sparse, stats = sparsify.apply_threshold(g, 0.0)
    stats.k_target = g.size
    return sparse, stats


class _TopK:
    def __init__(self, delta):
        self.delta = delta

    def __call__(self, grad, iteration=0):
        return sparsify.topk_exact(grad, sparsify.k_from_ratio(self.delta, np.size(grad)))


class _ExactQuantileThreshold:
    """Threshold compressor fed the exact k-th largest magnitude."""

    def __init__(self, delta):
        self.delta = delta

    def __call__(self, grad, iteration=0):
        g = np.asarray(grad, dtype=np.float64)
        k = sparsify.k_from_ratio(self.delta, g.size)
        absg = np.abs(g)
        eta = float(np.partition(absg, g.size - k)[g.size - k])
        return sparsify.apply_threshold(g, eta, k_target=k)


class _RandK:
    def __init__(self, delta, seed):
        self.delta = delta
        self.seed = seed

    def __call__(self, grad, iteration=0):
        g = np.asarray(grad, dtype=np.float64)
        k = sparsify.k_from_ratio(self.delta, g.size)
        sparse = sparsify.randk(g, k, seed=[self.seed, iteration])
        return sparse, sparsify.CompressionStats(k, sparse.nnz, 0.0)


class _DGC:
    def __init__(self, delta, seed, **options):
        self.delta = delta
        self.seed = seed
        self.options = options

    def __call__(self, grad, iteration=0):
        return sparsify.dgc_estimate(grad, self.delta, seed=[self.seed, iteration], **self.options)


class _Gaussian:
    def __init__(self, delta):
        self.delta = delta

    def __call__(self, grad, iteration=0):
        return sparsify.gaussian_estimate(grad, self.delta)


class _Sidco(SidcoCompressor):
    def __call__(self, grad, iteration=0):
        return super().__call__(grad)


def make_compressor(name: str, delta: float, seed: int = 0, **options):
    """Build compressor ``name`` for target ratio ``delta``.

    ``delta >= 1`` means no compression for every name. ``seed`` feeds the
    randomized compressors (randk, dgc); per-call streams are derived from
    ``(seed, iteration)``.
    """
    name = name.lower()
    if name not in COMPRESSORS:
        raise InvalidInput(f"unknown compressor {name!r}; valid names: {', '.join(COMPRESSORS)}")
    allowed = _SIDCO_OPTIONS if name in SIDCO_FLAVORS else _DGC_OPTIONS if name == "dgc" else set()
    unknown = set(options) - allowed
    if unknown:
        raise InvalidInput(f"compressor {name!r} does not take options {sorted(unknown)}")
    delta = float(delta)
    if not delta > 0:
        raise InvalidInput(f"delta must be > 0, got {delta}")
    if name == "none" or delta >= 1.0:
        return _identity
    if name == "topk":
        return _TopK(delta)
    if name == "threshold":
        return _ExactQuantileThreshold(delta)
    if name == "randk":
        return _RandK(delta, seed)
    if name == "dgc":
        return _DGC(delta, seed, **options)
    if name == "gaussian":
        return _Gaussian(delta)
    return _Sidco(SidcoConfig(delta, flavor=SIDCO_FLAVORS[name], **options))
