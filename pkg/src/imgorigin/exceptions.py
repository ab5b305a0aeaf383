"""Exception types shared across the package.

Everything raised on purpose derives from ImgOriginError so callers can
catch the package's failures with one except clause. The CLI maps
MissingArtifactError to its own exit code; everything else that is a
usage problem surfaces as click errors.
"""


class ImgOriginError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(ImgOriginError):
    """Two tensors that must agree in shape do not."""


class TensorFormatError(ImgOriginError):
    """A serialized tensor is malformed: bad magic, truncation, overflow."""


class GradientUnavailableError(ImgOriginError):
    """The model cannot provide input gradients (e.g. codebook models)."""


class DegenerateDistributionError(ImgOriginError):
    """A belonging distribution has zero spread; the z-score is undefined."""


class ConfigMismatchError(ImgOriginError):
    """A stored distribution was estimated under a different configuration."""


class MissingArtifactError(ImgOriginError):
    """A required file or directory (model, dataset, distribution) is absent."""


class InversionError(ImgOriginError):
    """Reverse-engineering failed outright (every restart diverged)."""
