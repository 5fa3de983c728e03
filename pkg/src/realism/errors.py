"""Exception types shared across the package.

Every error carries a short machine-parseable ``category`` that the
command line interface uses for its one-line failure reports.
"""


class RealismError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"


class FormatError(RealismError):
    """A file does not conform to its declared binary or text format."""

    category = "format-error"


class DataError(RealismError):
    """Inputs are structurally valid but semantically unusable."""

    category = "data-error"


class IdMismatchError(RealismError):
    """Image identifiers do not line up across two inputs."""

    category = "id-mismatch"


class LayerMismatchError(RealismError):
    """Layer names, order, or channel dimensions disagree."""

    category = "layer-mismatch"
