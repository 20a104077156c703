"""Exception hierarchy.

Every exception carries the process exit code the CLI maps it to:
0 success, 2 config, 3 data, 4 convergence, 5 internal.
"""

from __future__ import annotations


class HBSAEError(Exception):
    exit_code = 5


class ConfigError(HBSAEError):
    exit_code = 2


class DatasetError(HBSAEError):
    exit_code = 3


class ConvergenceError(HBSAEError):
    exit_code = 4


class RowError(DatasetError):
    """A problem with one CSV row. ``row`` is 1-based and counts the header as row 1."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        # every failing row of the same file, filled in by the parser
        self.errors: list[RowError] = [self]
        prefix = f"row {row}: " if row is not None else ""
        super().__init__(prefix + message)


class MissingColumn(RowError):
    pass


class BadEnumLevel(RowError):
    pass


class NonpositiveWeight(RowError):
    pass


class NonBinaryOutcome(RowError):
    pass


class NegativeCount(RowError):
    pass


class DuplicateCell(RowError):
    pass


class AreaWithZeroPopulation(DatasetError):
    pass


class UnknownArea(DatasetError):
    pass


class MissingCovariateRow(DatasetError):
    pass


class DegenerateCovariate(DatasetError):
    pass


class NoSample(DatasetError):
    pass


class EmptyCellSet(DatasetError):
    pass


class EmptyG2PoolCell(HBSAEError):
    pass


class EmptySample(DatasetError):
    pass


class DimensionMismatch(HBSAEError, ValueError):
    pass


class NonFiniteValue(HBSAEError, ArithmeticError):
    pass


class NonFiniteStart(HBSAEError):
    pass


class DivergenceRateExceeded(ConvergenceError):
    pass


class ZeroVariance(HBSAEError, ValueError):
    pass


class TooFewTailSamples(HBSAEError, ValueError):
    pass


class NonFiniteEntry(HBSAEError, ValueError):
    pass


class MismatchedObservations(DatasetError, ValueError):
    pass


class InsufficientReplicates(ConvergenceError, ValueError):
    pass
