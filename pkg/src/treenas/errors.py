"""Exception types raised across the package."""


class TreeNASError(Exception):
    """Base class for all package errors."""


class CapacityExceeded(TreeNASError):
    pass


class InvalidArch(TreeNASError, ValueError):
    pass


class NoCostModel(TreeNASError):
    pass


class ConstraintUnsupported(TreeNASError):
    pass


class SchemaError(TreeNASError, ValueError):
    pass


class CoverageError(TreeNASError):
    pass


class OutputsUnavailable(TreeNASError):
    """The evaluator cannot produce per-architecture output vectors."""


class ShapeMismatch(TreeNASError, ValueError):
    pass


class NonFinite(TreeNASError, ValueError):
    pass


class DegenerateMatrix(TreeNASError, ValueError):
    pass


class BudgetExhausted(TreeNASError):
    """Rejection sampling hit its attempt cap (budget or constraint infeasible)."""


class ForeignArchitecture(TreeNASError, KeyError):
    pass


class InvalidConfig(TreeNASError, ValueError):
    pass
