"""Exception hierarchy.

``ValidationError`` covers bad inputs and files (CLI exit code 1);
``NumericalError`` covers failures during computation (CLI exit code 2).
"""


class SplitGevError(Exception):
    pass


class ValidationError(SplitGevError, ValueError):
    pass


class DomainError(ValidationError):
    """Argument outside the domain of a mathematical function."""


class MeshError(ValidationError):
    pass


class NoCoverageError(ValidationError):
    """A site has no usable raster cells within the smoothing radius."""


class MissingArtifactError(ValidationError):
    pass


class NumericalError(SplitGevError, ArithmeticError):
    pass


class NotPositiveDefiniteError(NumericalError):
    pass


class SupportError(NumericalError):
    """An observation lies outside the GEV support."""
