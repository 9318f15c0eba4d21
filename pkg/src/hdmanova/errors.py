"""Exception hierarchy.

Two families matter to callers (and to the CLI exit codes):
``ValidationError`` for bad input or arguments, ``NumericError`` for
numerical or precondition failures on otherwise well-formed input.
"""

from __future__ import annotations


class ManovaError(Exception):
    """Base class for all package errors."""

    exit_code = 1

    def details(self) -> dict:
        return {}


class ValidationError(ManovaError, ValueError):
    """Malformed input, bad argument values, wrong shapes."""

    exit_code = 2


class LoadError(ValidationError):
    """CSV ingestion failure, located by 1-based row and column."""

    def __init__(self, message: str, path: str | None = None,
                 row: int | None = None, column: int | None = None):
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.path = path
        self.row = row
        self.column = column

    def details(self) -> dict:
        return {"path": self.path, "row": self.row, "column": self.column}


class NumericError(ManovaError, ArithmeticError):
    """Numerical failure or violated mathematical precondition."""

    exit_code = 3


class SingularityError(NumericError):
    """A matrix that must be inverted is (numerically) singular."""

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message)
        self.condition = condition

    def details(self) -> dict:
        return {"condition": self.condition}


class DominanceError(NumericError):
    """The leverage bound max_i P0_ii <= varpi0 < 1/2 fails.

    Without it the weight system is not guaranteed to be strictly
    diagonally dominant, so no weights are returned.
    """

    def __init__(self, index: int, value: float, bound: float):
        super().__init__(
            f"null-model leverage P0[{index},{index}] = {value:.6g} exceeds "
            f"varpi0 = {bound:.6g}; weight system not strictly diagonally dominant"
        )
        self.index = index
        self.value = value
        self.bound = bound

    def details(self) -> dict:
        return {"index": self.index, "value": self.value, "bound": self.bound}


class InfeasibleError(NumericError):
    """Configuration cannot be evaluated (e.g. p >= n/2 for sample splitting)."""

    def __init__(self, message: str, seed: int | None = None):
        super().__init__(message)
        self.seed = seed

    def details(self) -> dict:
        return {"seed": self.seed}
