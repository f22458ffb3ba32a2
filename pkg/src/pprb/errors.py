"""Exception types raised across the package."""


class PprbError(Exception):
    """Base class for all package-specific errors."""


class OutOfDomainError(PprbError, ValueError):
    """A location falls outside the grid bounding box."""


class QuadratureOverflowError(PprbError, FloatingPointError):
    """An intensity exponent exceeds its overflow guard (700 for cell
    intensities; the Poisson-rate bound for integrated masses)."""

    def __init__(self, cell_index, exponent, draw_index=None, guard=700.0):
        self.cell_index = None if cell_index is None else int(cell_index)
        self.exponent = float(exponent)
        self.draw_index = None if draw_index is None else int(draw_index)
        prefix = "" if draw_index is None else f"draw {draw_index}: "
        where = "" if cell_index is None else f" at cell {cell_index}"
        super().__init__(
            f"{prefix}intensity exponent {exponent:.3g}{where} "
            f"exceeds the overflow guard of {guard:g}"
        )


class StaleCacheError(PprbError, RuntimeError):
    """A quadrature cache is evaluated against coefficients it was not built from."""


class SeparationError(PprbError, RuntimeError):
    """Logistic maximum likelihood diverged (perfectly separable labels)."""


class SingularDesignError(PprbError, RuntimeError):
    """Design matrix is rank deficient."""


class NotPositiveDefiniteError(PprbError, RuntimeError):
    """Covariance factorization failed."""


class SelectionFailureError(PprbError, RuntimeError):
    """Every candidate basis failed to fit."""


class InsufficientPointsError(PprbError, ValueError):
    """Too few points for a pairwise statistic (needs n >= 2)."""
