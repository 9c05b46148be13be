"""Exception hierarchy shared by every module.

Each class carries the process exit code the command line maps it to.
"""


class CiscrubError(Exception):
    exit_code = 1


class UsageError(CiscrubError):
    exit_code = 2


class ConfigError(CiscrubError):
    exit_code = 2


class FormatError(CiscrubError):
    exit_code = 3


class DimensionMismatch(CiscrubError, ValueError):
    exit_code = 3


class DegenerateInput(CiscrubError, ValueError):
    exit_code = 4


class TieError(DegenerateInput):
    """Ties present where a tie-free input was required."""


class NumericError(CiscrubError, ArithmeticError):
    exit_code = 4


class NonFinite(NumericError):
    pass


class BlockTooLarge(NumericError):
    pass


class SingularHessian(NumericError):
    pass
