"""Exception types shared across the pipeline.

The CLI maps InputError subclasses to exit code 2 and NumericalError to
exit code 3; everything else is a bug.
"""


class VoxstyleError(Exception):
    pass


class InputError(VoxstyleError):
    """Malformed inputs, contract violations, bad files."""


class OutOfBoundsError(InputError):
    """World position outside the grid bounding box."""


class DimensionError(InputError):
    """Array shape or coefficient count mismatch."""


class ContractViolationError(InputError):
    """A numeric precondition (e.g. sigma >= 0) was violated."""


class StaleAuxError(InputError):
    """Render aux used after the grid parameters changed."""


class MissingFeatureError(InputError):
    """Precomputed feature lookup failed for an image key."""


class NonDifferentiableError(InputError):
    """Backprop requested through a non-differentiable extractor."""


class DegenerateVectorError(InputError):
    """Zero-norm vector where a direction is required."""


class EmptyCandidateError(InputError):
    """Nearest-neighbor search against an empty candidate set."""


class ConfigurationError(InputError):
    """Task/label bindings inconsistent with the data."""


class FormatError(InputError):
    """Corrupt or mistyped container file."""


class ChecksumError(FormatError):
    """Payload CRC mismatch in a tensor container."""


class NumericalError(VoxstyleError):
    """Optimization diverged (NaN/Inf loss)."""
