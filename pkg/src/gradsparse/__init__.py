"""Gradient sparsification with statistical threshold estimation."""
from .errors import (
    AllZeroInput,
    ConfigError,
    DegenerateInput,
    DimMismatch,
    DivergenceDetected,
    GradSparseError,
    InvalidInput,
    InvalidK,
    NonConvergence,
    TraceFormatError,
    UnsupportedRatio,
)
from .gradmodel import (
    Exponential,
    Gamma,
    Gaussian,
    GeneralizedPareto,
    compressibility_check,
    estimate_exponential,
    estimate_gamma,
    estimate_gpd,
    sparsification_error_curve,
    threshold_from_params,
)
from .sidco import Flavor, SidcoCompressor, SidcoConfig, SidcoState, sidco_sparsify, stage_schedule
from .sparsify import (
    CompressionStats,
    ECMemory,
    SparseGradient,
    apply_threshold,
    dgc_estimate,
    ec_apply,
    ec_update,
    gaussian_estimate,
    randk,
    topk_exact,
)

__version__ = "0.1.0"
