"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ValidationError and subclasses map to
exit code 1, I/O failures (OSError) to 2, ConsistencyError to 3.
"""

from __future__ import annotations


class HypercurateError(Exception):
    """Base class for all package errors."""


class ValidationError(HypercurateError):
    """Invalid input: bad geometry, schema violations, bad configuration."""


class DegenerateGeometryError(ValidationError):
    """Polygon collapses below the degeneracy tolerance."""


class CrossCrsError(ValidationError):
    """Operands live in different coordinate reference systems."""


class NotFoundError(ValidationError):
    """A referenced identifier does not exist."""


class CoverageError(ValidationError):
    """A window falls outside the extent of the raster meant to cover it."""


class MappingError(ValidationError):
    """A label code has no entry in the aggregation map."""

    def __init__(self, codes):
        self.codes = tuple(sorted(codes))
        listing = ", ".join(str(c) for c in self.codes)
        super().__init__(f"unmapped label code(s): {listing}")


class NoDataError(ValidationError):
    """A patch window contains no-data samples in kept bands."""


class ConsistencyError(HypercurateError):
    """An internal invariant was violated; indicates a bug in the caller."""
