"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1,
data problems exit 2, training divergence exits 3.
"""


class StructProbeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(StructProbeError):
    """Invalid configuration: bad manifest, bad flag combination, bad schema."""


class DataError(StructProbeError):
    """Malformed or inconsistent input data (files, records, pairings)."""


class TrainingDiverged(StructProbeError):
    """Training produced a non-finite loss or gradient."""
