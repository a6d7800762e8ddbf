"""Exception hierarchy shared by every module."""


class GradSparseError(Exception):
    """Base class for all library errors."""


class InvalidInput(GradSparseError, ValueError):
    """Input vector failed validation (empty, non-finite, wrong shape)."""


class AllZeroInput(GradSparseError, ValueError):
    pass


class DegenerateInput(GradSparseError, ValueError):
    """Data cannot support the requested fit (zero variance, too few positives)."""


class UnsupportedRatio(GradSparseError, ValueError):
    pass


class InvalidK(GradSparseError, ValueError):
    pass


class DimMismatch(GradSparseError, ValueError):
    pass


class NonConvergence(GradSparseError, RuntimeError):
    pass


class DivergenceDetected(GradSparseError, RuntimeError):
    """Training loss became non-finite. ``records`` holds the partial trace."""

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = list(records or [])


class TraceFormatError(GradSparseError, ValueError):
    pass


class ConfigError(GradSparseError, ValueError):
    """Configuration failed schema validation. ``problems`` lists every violation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
