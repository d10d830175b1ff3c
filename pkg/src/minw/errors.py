"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MinwError(Exception):
    exit_code = 1


class ConfigError(MinwError, ValueError):
    exit_code = 2


class DimensionError(MinwError, ValueError):
    exit_code = 2


class NumericError(MinwError, ArithmeticError):
    exit_code = 3


class StateError(MinwError, RuntimeError):
    exit_code = 3


class EncodingError(MinwError, ValueError):
    exit_code = 4


class FormatError(MinwError, ValueError):
    exit_code = 4


class DataError(MinwError, ValueError):
    exit_code = 4
