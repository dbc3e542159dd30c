"""Exception types shared across the package.

The CLI maps these to exit codes: ``NumericalError`` -> 3, ``DataFormatError``
and ``OSError`` -> 4.
"""


class ShapeError(ValueError):
    """Array shapes are inconsistent with each other or with a model spec."""


class NonSmoothError(ValueError):
    """A second-order quantity was requested for a non-smooth activation in bilevel mode."""


class NumericalError(ArithmeticError):
    """Non-finite values, divergence, or a solver failing its postcondition."""


class ConvergenceError(NumericalError):
    """An iterative solver stopped without meeting its tolerance."""

    def __init__(self, msg, iters=None, residual=None):
        super().__init__(msg)
        self.iters = iters
        self.residual = residual


class DataFormatError(ValueError):
    """A file on disk does not match the expected binary layout."""
