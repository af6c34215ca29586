"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class TopoguardError(Exception):
    exit_code = 1


class ConfigError(TopoguardError, ValueError):
    exit_code = 2


class DataError(TopoguardError, ValueError):
    exit_code = 3


class FormatError(DataError):
    pass


class ShapeError(TopoguardError, ValueError):
    exit_code = 2


class NumericError(TopoguardError, ArithmeticError):
    exit_code = 4


class DegeneracyError(NumericError):
    pass
