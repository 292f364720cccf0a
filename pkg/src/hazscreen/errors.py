"""Exception types shared across the package.

DataError maps to CLI exit code 2 (bad input/configuration), NumericalError
to exit code 3 (singularity, non-convergence, failed resampling).
"""


class HazScreenError(Exception):
    pass


class DataError(HazScreenError):
    """Invalid input data or configuration."""


class StandardizationError(DataError):
    """A feature column cannot be standardized (zero variance)."""


class ParseError(DataError):
    """Malformed input file; message carries the offending location."""


class NumericalError(HazScreenError):
    """Numerical failure: singular system, non-convergence, bad resample."""


class SingularModelError(NumericalError):
    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond
