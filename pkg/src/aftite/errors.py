"""Exception hierarchy. The CLI maps each class to an exit code."""


class AftiteError(Exception):
    """Base class for every error raised by this package."""

    kind = "error"


class SchemaError(AftiteError, ValueError):
    """Input file or schema mapping is unusable."""

    kind = "schema"


class DataError(AftiteError, ValueError):
    """Input values violate a precondition (empty arm, constant column, ...)."""

    kind = "data"


class NumericalError(AftiteError, ArithmeticError):
    """Non-finite likelihood, singular Hessian, negative variance."""

    kind = "numerical"


class RankDeficientError(NumericalError):
    kind = "rank"


class BootstrapFailureError(AftiteError, RuntimeError):
    """Too many bootstrap replicates failed to produce a usable fit."""

    kind = "bootstrap"
