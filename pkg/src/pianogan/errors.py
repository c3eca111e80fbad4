"""Exception types shared across the package."""


class PianoganError(Exception):
    """Base class for all package errors."""


class DimensionError(PianoganError, ValueError):
    """Tensor extents are incompatible with an operation."""


class DegenerateBatchError(PianoganError, ValueError):
    """Batch statistics requested from a batch that cannot provide them."""


class NonFiniteError(PianoganError, FloatingPointError):
    """A NaN or Inf appeared in values or gradients."""


class NotDifferentiableError(PianoganError, RuntimeError):
    """Backward requested through an op that has no gradient rule."""


class ConfigurationError(PianoganError, ValueError):
    """Network, resolution or run configuration is inconsistent."""


class FormatError(PianoganError, ValueError):
    """A file on disk does not follow the expected binary layout."""


class DomainError(PianoganError, ValueError):
    """Input values fall outside the domain of a metric or transform."""


class OverlapError(PianoganError, ValueError):
    """Two notes of the same pitch and track overlap in time."""


class ProvenanceError(PianoganError, AssertionError):
    """A batch fed to the critic did not come from the expected source."""
