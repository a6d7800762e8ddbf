"""Multi-stage statistical threshold estimation with adaptive stage count.

Each call fits a sparsity-inducing law to ``|g|``, takes the threshold for the
first stage ratio, keeps the exceedances, refits the (shifted) exceedances and
so on for ``M`` stages whose ratios multiply to the target. The last threshold
is applied to the original vector. Every ``Q`` calls the stage count moves by
one if the average selected count left the ``k (1 +/- eps)`` band.

Flavors:

* ``exponential``: exponential at every stage (exceedances of an exponential
  are exponential after shifting).
* ``gamma_gpd``: gamma at stage 1, then GPD located at the previous threshold.
* ``gpd``: GPD at every stage.
"""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import gradmodel
from .errors import AllZeroInput, DegenerateInput, GradSparseError, InvalidInput
from .sparsify import CompressionStats, SparseGradient, k_from_ratio

log = logging.getLogger(__name__)


class Flavor(str, enum.Enum):
    EXPONENTIAL = "exponential"
    GAMMA_GPD = "gamma_gpd"
    GPD = "gpd"


@dataclass(frozen=True)
class SidcoConfig:
    delta: float
    first_stage_ratio: float = 0.25
    eps_high: float = 0.2
    eps_low: float = 0.2
    window: int = 5
    max_stages: int = 10
    flavor: Flavor = Flavor.EXPONENTIAL

    def __post_init__(self):
        object.__setattr__(self, "flavor", Flavor(self.flavor))
        if not 0.0 < self.delta < 1.0:
            raise InvalidInput(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.first_stage_ratio < 1.0:
            raise InvalidInput(f"first_stage_ratio must lie in (0, 1), got {self.first_stage_ratio}")
        if min(self.eps_high, self.eps_low) < 0 or max(self.eps_high, self.eps_low) >= 1:
            raise InvalidInput("tolerances must satisfy 0 <= eps < 1")
        if self.window < 1 or self.max_stages < 1:
            raise InvalidInput("window and max_stages must be >= 1")

    @property
    def eps(self) -> float:
        return max(self.eps_high, self.eps_low)


@dataclass
class SidcoState:
    stages: int = 1
    k_hat_accum: int = 0
    n_accum: int = 0
    iter_in_window: int = 0


@dataclass
class SidcoStats(CompressionStats):
    stages: int = 1
    stage_thresholds: list = field(default_factory=list)
    fallback: bool = False


def feasible_stages(delta: float, first_stage_ratio: float, stages: int) -> int:
    """Largest ``m <= stages`` with ``delta < first_stage_ratio**(m-1)``."""
    m = max(1, int(stages))
    while m > 1 and not delta < first_stage_ratio ** (m - 1):
        m -= 1
    return m


def stage_schedule(delta: float, first_stage_ratio: float, stages: int) -> list[float]:
    """Per-stage ratios: ``first_stage_ratio`` repeated, remainder last.

    The product equals ``delta``. An infeasible stage count is reduced until
    every ratio lies in (0, 1); compare ``len`` of the result with ``stages``
    to detect that.
    """
    m = feasible_stages(delta, first_stage_ratio, stages)
    if m == 1:
        return [delta]
    return [first_stage_ratio] * (m - 1) + [delta / first_stage_ratio ** (m - 1)]


# Stages whose nominal exceedance fraction is above this are fitted from
# chunked moments over the full vector; compacting a dense exceedance set is
# several times slower than a masked pass. Below it the set is compacted once.
_COMPACT_FRACTION = 0.125
_CHUNK = 1 << 16


class _Magnitudes:
    """``|g|`` visited in cache-sized chunks.

    With ``signed=True`` the source is the raw gradient and magnitudes are
    formed per chunk, so the full ``|g|`` vector is only built when a fit
    needs the whole array (gamma first stage).
    """

    def __init__(self, src: np.ndarray, signed: bool):
        self.src = src
        self.signed = signed
        self.size = src.size
        self._buf = np.empty(min(_CHUNK, self.size))
        self._mask = np.empty(min(_CHUNK, self.size), dtype=bool)
        self._full = None if signed else src

    def chunks(self):
        for i in range(0, self.size, _CHUNK):
            x = self.src[i:i + _CHUNK]
            if self.signed:
                x = np.abs(x, out=self._buf[:x.size])
            yield i, x

    def full(self) -> np.ndarray:
        if self._full is None:
            self._full = np.abs(self.src)
        return self._full

    def sum(self) -> float:
        return sum(float(x.sum()) for _, x in self.chunks())

    def moments(self) -> tuple[float, float]:
        """Mean and population variance over all elements."""
        s1 = s2 = 0.0
        for _, x in self.chunks():
            s1 += float(x.sum())
            s2 += float(np.dot(x, x))
        mean = s1 / self.size
        return mean, max(s2 / self.size - mean * mean, 0.0)

    def excess_moments(self, location: float) -> tuple[int, float, float]:
        """Count, mean and population variance of ``|g| - location`` over ``|g| > location``."""
        n, s1, s2 = 0, 0.0, 0.0
        for _, x in self.chunks():
            m = self._mask[:x.size]
            np.greater(x, location, out=m)
            c = int(np.count_nonzero(m))
            if c == 0:
                continue
            x = np.subtract(x, location, out=self._buf[:x.size])  # in place when signed
            x *= m
            n += c
            s1 += float(x.sum())
            s2 += float(np.dot(x, x))
        if n == 0:
            return 0, 0.0, 0.0
        mean = s1 / n
        return n, mean, max(s2 / n - mean * mean, 0.0)

    def compact_above(self, location: float) -> tuple[np.ndarray, np.ndarray]:
        """Ascending indices and values of ``|g| > location``."""
        idx, vals = [], []
        for i, x in self.chunks():
            m = self._mask[:x.size]
            np.greater(x, location, out=m)
            j = np.flatnonzero(m)
            idx.append(j + i)
            vals.append(x[j])
        return np.concatenate(idx), np.concatenate(vals)

    def select_at_least(self, eta: float) -> np.ndarray:
        """Ascending indices of ``|g| >= eta``."""
        out = []
        for i, x in self.chunks():
            m = self._mask[:x.size]
            np.greater_equal(x, eta, out=m)
            out.append(np.flatnonzero(m) + i)
        return np.concatenate(out)


def _exponential_threshold(beta: float, location: float, ratio: float) -> float:
    if not beta > 0.0:
        raise DegenerateInput("exceedances carry no mass above the previous threshold")
    return location + beta * -math.log(ratio)


def _first_stage(flavor: Flavor, mags: _Magnitudes, ratio: float, total: float | None) -> float:
    if flavor is Flavor.EXPONENTIAL:
        total = mags.sum() if total is None else total
        if not total > 0.0:
            raise AllZeroInput("all elements are zero; exponential scale is undefined")
        return _exponential_threshold(total / mags.size, 0.0, ratio)
    if flavor is Flavor.GAMMA_GPD:
        return gradmodel.threshold_from_params(gradmodel._fit_gamma(mags.full()), ratio)
    if mags.size < 2:
        raise DegenerateInput("GPD fit needs at least 2 elements")
    mean, var = mags.moments()
    return gradmodel.threshold_from_params(gradmodel._gpd_from_moments(mean, var), ratio)


def _later_stage(flavor: Flavor, n: int, mean: float, var: float, location: float, ratio: float) -> float:
    if flavor is Flavor.EXPONENTIAL:
        return _exponential_threshold(mean, location, ratio)
    if n < 2:
        raise DegenerateInput("GPD fit needs at least 2 elements")
    return gradmodel.threshold_from_params(gradmodel._gpd_from_moments(mean, var, location), ratio)


def estimate_threshold(absg: np.ndarray, ratios, flavor: Flavor) -> tuple[list[float], bool]:
    """Run the stage loop on magnitudes; returns per-stage thresholds and a fallback flag.

    Each stage fits the exceedances (strictly above the previous threshold)
    shifted by that threshold. A fit failure past the first stage stops the
    loop and keeps the previous threshold; first-stage failures propagate.
    """
    mags = _Magnitudes(np.asarray(absg, dtype=np.float64), signed=False)
    thresholds, fallback, _ = _run_stages(mags, ratios, Flavor(flavor))
    return thresholds, fallback


def _run_stages(mags: _Magnitudes, ratios, flavor: Flavor, total: float | None = None):
    """Stage loop; also returns the compacted exceedance set ``(idx, values, location)`` if one was built."""
    thresholds: list[float] = []
    support = None
    fraction = 1.0
    location = 0.0
    for m, ratio in enumerate(ratios):
        try:
            if m == 0:
                eta = _first_stage(flavor, mags, ratio, total)
            else:
                if fraction > _COMPACT_FRACTION:
                    n, mean, var = mags.excess_moments(location)
                else:
                    if support is None:
                        idx, x = mags.compact_above(location)
                    else:
                        keep = support[1] > location
                        idx, x = support[0][keep], support[1][keep]
                    support = (idx, x, location)
                    n = x.size
                    mean = float(x.mean()) - location if n else 0.0
                    var = float(x.var()) if n else 0.0
                eta = _later_stage(flavor, n, mean, var, location, ratio)
        except GradSparseError as exc:
            if m == 0:
                raise
            log.debug("stage %d fit failed (%s); keeping stage %d threshold", m + 1, exc, m)
            return thresholds, True, support
        # a later stage can only raise the threshold: exceedances sit above it
        location = max(eta, location)
        thresholds.append(location)
        fraction *= ratio
    return thresholds, False, support


def adapt_stages(state: SidcoState, config: SidcoConfig, k_hat_avg: float, k_target: int) -> int:
    """Move the stage count by one when the average count leaves the tolerance band."""
    m = state.stages
    if k_hat_avg > k_target * (1.0 + config.eps_high):
        m -= 1
    if k_hat_avg < k_target * (1.0 - config.eps_low):
        m += 1
    state.stages = min(max(m, 1), config.max_stages)
    return state.stages


def _record(state: SidcoState, config: SidcoConfig, k_hat: int, k_target: int) -> None:
    # The closing call of a window triggers adaptation and is not accumulated.
    if state.iter_in_window == config.window - 1:
        if state.n_accum:
            avg = state.k_hat_accum / state.n_accum
        else:
            avg = float(k_hat)
        adapt_stages(state, config, avg, k_target)
        state.k_hat_accum = 0
        state.n_accum = 0
        state.iter_in_window = 0
    else:
        state.k_hat_accum += k_hat
        state.n_accum += 1
        state.iter_in_window += 1


def sidco_sparsify(grad, config: SidcoConfig, state: SidcoState) -> tuple[SparseGradient, SidcoStats]:
    """Compress ``grad`` to roughly ``config.delta`` of its entries, updating ``state``."""
    t0 = time.perf_counter_ns()
    g = gradmodel.as_gradient(grad, check_finite=False)
    d = g.size
    k = k_from_ratio(config.delta, d)
    mags = _Magnitudes(g, signed=True)
    # the magnitude sum doubles as the NaN / Inf scan
    total = mags.sum()
    if not math.isfinite(total):
        gradmodel.as_gradient(g)  # raises on NaN / Inf
        raise DegenerateInput("sum of magnitudes overflows float64")
    ratios = stage_schedule(config.delta, config.first_stage_ratio, state.stages)
    thresholds, fallback, support = _run_stages(mags, ratios, config.flavor, total)
    eta = thresholds[-1]
    if support is not None and eta > support[2]:
        # every |g| >= eta lies strictly above the compaction level
        idx = support[0][support[1] >= eta]
    elif eta > 0.0:
        idx = mags.select_at_least(eta)
    else:
        idx = np.flatnonzero(g)
    sparse = SparseGradient(idx, g[idx], d)
    stats = SidcoStats(
        k_target=k,
        k_hat=sparse.nnz,
        threshold=eta,
        stages=len(ratios),
        stage_thresholds=thresholds,
        fallback=fallback,
    )
    _record(state, config, stats.k_hat, k)
    stats.elapsed_ns = time.perf_counter_ns() - t0
    return sparse, stats


class SidcoCompressor:
    """Stateful wrapper owning one :class:`SidcoState`; one instance per worker."""

    def __init__(self, config: SidcoConfig, state: SidcoState | None = None):
        self.config = config
        self.state = state if state is not None else SidcoState()

    def __call__(self, grad):
        return sidco_sparsify(grad, self.config, self.state)

    def __repr__(self):
        return f"SidcoCompressor({self.config.flavor.value}, delta={self.config.delta}, M={self.state.stages})"
