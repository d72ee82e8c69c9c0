"""Exception and warning types raised across fairlift."""


class FairliftError(Exception):
    """Base class for all fairlift errors."""


# --- dataset io -----------------------------------------------------------

class MissingColumn(FairliftError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class TypeCoercion(FairliftError, ValueError):
    pass


class EmptyInput(FairliftError, ValueError):
    pass


class DuplicateProtectedKey(FairliftError, ValueError):
    pass


class DisjointKeys(FairliftError, ValueError):
    pass


class EmptyProjection(FairliftError, ValueError):
    pass


# --- engine ---------------------------------------------------------------

class OutOfMemoryBudget(FairliftError, MemoryError):
    pass


# --- metrics --------------------------------------------------------------

class InvalidOrder(FairliftError, ValueError):
    pass


class DegenerateGroup(FairliftError, ValueError):
    pass


class ScoreOutOfRange(FairliftError, ValueError):
    pass


class EmptyGroup(FairliftError, ValueError):
    pass


class UndefinedMetric(FairliftError, ArithmeticError):
    """A metric whose value does not exist for the given input (zero denominator,
    single-class group, ...). Reports turn these into nulls carrying the reason."""


class SingleClassGroup(UndefinedMetric):
    pass


class AllGroupsUndefined(FairliftError, ValueError):
    pass


class InvalidAlpha(FairliftError, ValueError):
    pass


class NonpositiveMean(FairliftError, ValueError):
    pass


class NonpositiveBenefit(FairliftError, ValueError):
    pass


# --- driver ---------------------------------------------------------------

class ConfigError(FairliftError, ValueError):
    pass


class ConfigSyntaxError(ConfigError):
    def __init__(self, message, line, column):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnknownMetricToken(ConfigError):
    pass


class MissingRequiredKey(ConfigError):
    pass


class DuplicateToken(FairliftError, ValueError):
    pass


class ReportIOError(FairliftError, OSError):
    pass


# --- warnings -------------------------------------------------------------

class FairliftWarning(UserWarning):
    pass


class AbsoluteContinuityWarning(FairliftWarning):
    """KL divergence hit a category with reference mass but no observed mass."""
