"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: DataError -> 2, EstimationError -> 3,
DegeneracyError -> 4.
"""


class CpFactorError(Exception):
    """Base class for all package errors."""


class DataError(CpFactorError):
    """Invalid input data or arguments (shape mismatch, bad file, bad config)."""


class EstimationError(CpFactorError):
    """An estimation procedure could not produce a result."""


class DegeneracyError(CpFactorError):
    """Numerical degeneracy: rank-deficient grams, singular designs, zero scales."""


class RankDeficientError(DegeneracyError):
    """Loading matrix columns are (numerically) linearly dependent."""

    def __init__(self, smallest_singular_value: float, context: str = ""):
        self.smallest_singular_value = float(smallest_singular_value)
        msg = f"rank-deficient matrix: smallest singular value {smallest_singular_value:.3e}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class SurvivorShortfallError(EstimationError):
    """Randomized projection redundancy filter left fewer tuples than requested."""

    def __init__(self, requested: int, survivors: int):
        self.requested = int(requested)
        self.survivors = int(survivors)
        super().__init__(
            f"insufficient survivors after redundancy removal: "
            f"needed {requested}, found {survivors}; retry with larger L"
        )
