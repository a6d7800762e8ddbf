"""Sparsity-inducing distribution fits, threshold formulas and compressibility diagnostics.

Gradients are modelled as symmetric around zero, so every fitter works on the
absolute values ``|g|``:

* double exponential  -> ``|g| ~ Exp(beta)``
* double gamma        -> ``|g| ~ Gamma(alpha, beta)``
* double GPD          -> ``|g| - a ~ GP(alpha, beta)`` with location ``a``

A threshold ``eta`` for target ratio ``delta`` is the ``1 - delta`` quantile of
the fitted magnitude law, so on average ``delta * d`` elements exceed it.

All statistics are computed in float64 regardless of input precision.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import special, stats

from .errors import (
    AllZeroInput,
    DegenerateInput,
    InvalidInput,
    NonConvergence,
    UnsupportedRatio,
)

ZERO_TOL = 1e-12
GPD_SHAPE_MARGIN = 1e-6
GPD_SHAPE_LIMIT = 0.5
# s = log(mean) - mean(log) is nonnegative by Jensen; below this it is rounding noise.
GAMMA_S_TOL = 1e-10


@dataclass(frozen=True)
class Exponential:
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidInput(f"exponential scale must be > 0, got {self.scale}")


@dataclass(frozen=True)
class Gamma:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise InvalidInput(f"gamma parameters must be > 0, got {self.shape}, {self.scale}")


@dataclass(frozen=True)
class GeneralizedPareto:
    """GPD of the magnitudes above ``location``.

    ``clamped`` is set when the moment estimate of ``shape`` fell outside
    ``(-0.5, 0.5)`` and was pulled back inside the open interval.
    """

    shape: float
    scale: float
    location: float = 0.0
    clamped: bool = False

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidInput(f"GPD scale must be > 0, got {self.scale}")
        if not -GPD_SHAPE_LIMIT < self.shape < GPD_SHAPE_LIMIT:
            raise InvalidInput(f"GPD shape must lie in (-0.5, 0.5), got {self.shape}")
        if not self.location >= 0:
            raise InvalidInput(f"GPD location must be >= 0, got {self.location}")


@dataclass(frozen=True)
class Gaussian:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise InvalidInput(f"gaussian std must be > 0, got {self.std}")


DistributionParams = Union[Exponential, Gamma, GeneralizedPareto, Gaussian]


def as_gradient(values, check_finite: bool = True) -> np.ndarray:
    """Validate and widen ``values`` into a flat finite float64 vector.

    ``check_finite=False`` skips the NaN/Inf scan for callers that detect it
    from a reduction they compute anyway.
    """
    arr = np.asarray(values)
    if arr.dtype.kind not in "fiu":
        raise InvalidInput(f"gradient must be real-valued, got dtype {arr.dtype}")
    arr = np.ascontiguousarray(arr, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise InvalidInput("gradient must have at least one element")
    if check_finite and not np.isfinite(arr).all():
        raise InvalidInput("gradient contains NaN or Inf")
    return arr


def check_ratio(delta: float) -> float:
    delta = float(delta)
    if not 0.0 < delta < 1.0:
        raise UnsupportedRatio(f"compression ratio must lie in (0, 1), got {delta}")
    return delta


# -- fitters on validated nonnegative float64 arrays (hot path, no copies) --

def _fit_exponential(absg: np.ndarray) -> Exponential:
    beta = float(absg.mean())
    if beta <= 0.0:
        raise AllZeroInput("all elements are zero; exponential scale is undefined")
    return Exponential(beta)


def _fit_gamma(absg: np.ndarray) -> Gamma:
    if absg.min() < ZERO_TOL:
        pos = absg[absg >= ZERO_TOL]
        if pos.size * 2 < absg.size:
            raise DegenerateInput(
                f"{absg.size - pos.size} of {absg.size} elements are zero; gamma fit needs a positive majority"
            )
    else:
        pos = absg
    if pos.size < 2:
        raise DegenerateInput("gamma fit needs at least 2 strictly positive elements")
    mu = float(pos.mean())
    s = math.log(mu) - float(np.log(pos).mean())
    if not s > GAMMA_S_TOL:
        raise DegenerateInput(f"log-moment statistic s={s:.3g} is not positive (near-constant data)")
    shape = (3.0 - s + math.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    return Gamma(shape, mu / shape)


def _fit_gpd(absg: np.ndarray, location: float = 0.0) -> GeneralizedPareto:
    if absg.size < 2:
        raise DegenerateInput("GPD fit needs at least 2 elements")
    return _gpd_from_moments(float(absg.mean()) - location, float(absg.var()), location)


def _gpd_from_moments(mu: float, var: float, location: float = 0.0) -> GeneralizedPareto:
    """Moment-matched GPD from the mean excess ``mu`` and variance ``var``."""
    if not var > 0.0 or not mu > 0.0:
        raise DegenerateInput(f"GPD fit needs positive mean excess and variance (mean={mu}, var={var})")
    ratio = mu * mu / var
    shape = 0.5 * (1.0 - ratio)
    scale = 0.5 * mu * (ratio + 1.0)
    lo, hi = -GPD_SHAPE_LIMIT + GPD_SHAPE_MARGIN, GPD_SHAPE_LIMIT - GPD_SHAPE_MARGIN
    clamped = not lo <= shape <= hi
    if clamped:
        shape = min(max(shape, lo), hi)
    return GeneralizedPareto(shape, scale, float(location), clamped)


def _fit_gaussian(g: np.ndarray) -> Gaussian:
    if g.size < 2:
        raise DegenerateInput("gaussian fit needs at least 2 elements")
    std = float(g.std())
    if not std > 0.0:
        raise DegenerateInput("zero variance; gaussian fit is undefined")
    return Gaussian(float(g.mean()), std)


# -- public estimators --

def estimate_exponential(absgrad) -> Exponential:
    """Scale of ``Exp(beta)`` by maximum likelihood: the sample mean."""
    return _fit_exponential(np.abs(as_gradient(absgrad)))


def estimate_gamma(absgrad) -> Gamma:
    """Gamma fit with the closed-form shape approximation.

    With ``s = log(mean) - mean(log)`` the shape is
    ``(3 - s + sqrt((s - 3)^2 + 24 s)) / (12 s)`` and the scale ``mean / shape``.
    Elements below 1e-12 are left out of both moments.
    """
    return _fit_gamma(np.abs(as_gradient(absgrad)))


def estimate_gpd(absgrad, location: float = 0.0) -> GeneralizedPareto:
    """Method-of-moments GPD fit of ``|g| - location``.

    Shape ``(1 - m^2/v) / 2`` and scale ``m (m^2/v + 1) / 2`` from the mean ``m``
    and variance ``v`` of the shifted values.
    """
    location = float(location)
    if not location >= 0:
        raise InvalidInput(f"location must be >= 0, got {location}")
    return _fit_gpd(np.abs(as_gradient(absgrad)), location)


def estimate_gaussian(grad) -> Gaussian:
    return _fit_gaussian(as_gradient(grad))


def fit(family: str, absgrad, location: float = 0.0) -> DistributionParams:
    """Dispatch by family name: exponential, gamma, gpd or gaussian."""
    family = family.lower()
    if family in ("exponential", "exp", "laplace"):
        return estimate_exponential(absgrad)
    if family == "gamma":
        return estimate_gamma(absgrad)
    if family in ("gpd", "genpareto", "generalized_pareto"):
        return estimate_gpd(absgrad, location)
    if family in ("gaussian", "normal"):
        return estimate_gaussian(absgrad)
    raise InvalidInput(f"unknown family {family!r}; expected exponential, gamma, gpd or gaussian")


# -- thresholds --

def _gpd_excess_quantile(shape: float, scale: float, delta: float) -> float:
    # (scale/shape) * (delta^-shape - 1), stable as shape -> 0
    x = -math.log(delta)
    if shape == 0.0:
        return scale * x
    return scale * math.expm1(shape * x) / shape


def _folded_normal_isf(mean: float, std: float, delta: float) -> float:
    if mean == 0.0:
        return std * float(special.ndtri(1.0 - 0.5 * delta))

    def tail(eta):
        return special.ndtr((-eta - mean) / std) + special.ndtr((mean - eta) / std) - delta

    hi = abs(mean) + std * (float(special.ndtri(1.0 - 0.25 * delta)) + 1.0)
    if tail(0.0) <= 0.0:
        return 0.0
    from scipy.optimize import brentq

    return float(brentq(tail, 0.0, hi, xtol=1e-14 * max(1.0, hi)))


def threshold_from_params(params: DistributionParams, delta: float) -> float:
    """Magnitude threshold that keeps a ``delta`` fraction of elements on average.

    Gamma uses the closed form ``-beta (log delta + log Gamma(alpha))``, which is
    exact at ``alpha = 1`` and approximate elsewhere. It can go negative for
    small shapes at large ``delta``; the result is floored at zero.
    """
    delta = check_ratio(delta)
    if isinstance(params, Exponential):
        return params.scale * -math.log(delta)
    if isinstance(params, Gamma):
        eta = -params.scale * (math.log(delta) + math.lgamma(params.shape))
        return max(eta, 0.0)
    if isinstance(params, GeneralizedPareto):
        return params.location + _gpd_excess_quantile(params.shape, params.scale, delta)
    if isinstance(params, Gaussian):
        return _folded_normal_isf(params.mean, params.std, delta)
    raise TypeError(f"unsupported parameter type {type(params).__name__}")


def gamma_threshold_exact_oracle(params: Gamma, delta: float, tol: float = 1e-10) -> float:
    """Exact gamma threshold ``scale * P^-1(shape, 1 - delta)`` by bisection.

    Reference only: the runtime path uses the closed-form approximation.
    """
    delta = check_ratio(delta)
    a = params.shape
    target = 1.0 - delta
    lo, hi = 0.0, a + 50.0 * max(1.0, a)
    if special.gammainc(a, hi) < target:
        raise NonConvergence(f"bisection bracket [0, {hi}] does not contain P^-1({a}, {target})")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if special.gammainc(a, mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    else:
        raise NonConvergence("bisection did not reach tolerance")
    return params.scale * 0.5 * (lo + hi)


# -- compressibility --

@dataclass(frozen=True)
class CompressibilityReport:
    decay_exponent: float
    prefactor: float
    fit_residual: float
    is_compressible: bool
    degenerate: bool = False
    n_fit: int = 0


@dataclass(frozen=True)
class SparsificationErrorCurve:
    ks: np.ndarray
    errors: np.ndarray

    def bound_constant(self, decay_exponent: float) -> float:
        """Smallest ``c2`` with ``sigma_k <= c2 * k**(1/2 - p)`` over the curve."""
        scale = self.ks.astype(np.float64) ** (0.5 - decay_exponent)
        return float(np.max(self.errors / scale))


def compressibility_check(grad, head_fraction: float | None = None, max_head: int = 10_000) -> CompressibilityReport:
    """Fit ``sorted|g|_j ~ c1 * j**-p`` by least squares in log-log space.

    Uses the ``min(max_head, d // 2)`` largest magnitudes (or ``head_fraction * d``
    if given), skipping entries below 1e-12. The vector counts as compressible
    when ``p > 0.5``.
    """
    g = as_gradient(grad)
    d = g.size
    if d < 10:
        raise InvalidInput(f"compressibility check needs d >= 10, got {d}")
    if head_fraction is None:
        n_head = min(max_head, d // 2)
    else:
        if not 0.0 < head_fraction <= 1.0:
            raise InvalidInput(f"head_fraction must lie in (0, 1], got {head_fraction}")
        n_head = max(2, int(math.ceil(head_fraction * d)))
    absg = np.abs(g)
    if n_head < d:
        head = np.partition(absg, d - n_head)[d - n_head:]
    else:
        head = absg
    head = np.sort(head)[::-1]
    ranks = np.arange(1, head.size + 1, dtype=np.float64)
    keep = head >= ZERO_TOL
    head, ranks = head[keep], ranks[keep]
    if head.size < 2:
        return CompressibilityReport(math.inf, 0.0, 0.0, True, degenerate=True, n_fit=int(head.size))
    x = np.log(ranks)
    y = np.log(head)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    p = float(-slope)
    return CompressibilityReport(
        decay_exponent=p,
        prefactor=float(math.exp(intercept)),
        fit_residual=float(np.sqrt(np.mean(resid**2))),
        is_compressible=p > 0.5,
        n_fit=int(head.size),
    )


def sparsification_error_curve(grad, ks: Sequence[int]) -> SparsificationErrorCurve:
    """Best k-term approximation error ``||g - T_k(g)||_2`` for each ``k``."""
    g = as_gradient(grad)
    d = g.size
    ks = np.asarray(ks, dtype=np.int64).reshape(-1)
    if ks.size and (ks.min() < 1 or ks.max() > d):
        raise InvalidInput(f"every k must lie in [1, {d}]")
    if np.any(np.diff(ks) < 0):
        raise InvalidInput("ks must be sorted ascending")
    # tail energy: sq[i] = sum of the i smallest squared magnitudes
    sq = np.concatenate(([0.0], np.cumsum(np.sort(g * g))))
    errors = np.sqrt(sq[d - ks])
    return SparsificationErrorCurve(ks, errors)
