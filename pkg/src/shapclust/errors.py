"""Exception types. Each maps to one CLI exit code."""


class ShapclustError(Exception):
    exit_code = 1


class ConfigError(ShapclustError, ValueError):
    exit_code = 2


class DataError(ShapclustError, ValueError):
    exit_code = 3


class NumericError(ShapclustError, ArithmeticError):
    exit_code = 4
