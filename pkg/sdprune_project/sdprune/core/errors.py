"""Exception hierarchy shared by every sdprune module.

Each class carries the process exit code the command layer maps it to:
0 success, 1 check-suite failure, 2 config/input error, 3 numeric divergence,
4 theory-fixture precondition abort.
"""
from typing import Optional


class SdpruneError(Exception):
    exit_code = 1


class CheckFailure(SdpruneError):
    exit_code = 1


class InputError(SdpruneError, ValueError):
    exit_code = 2


class ConfigError(InputError):
    pass


class DimensionError(InputError):
    pass


class SymmetryError(InputError):
    pass


class DegeneracyError(InputError):
    pass


class PartitionError(InputError):
    pass


class SizeError(InputError):
    pass


class FormatError(InputError):
    pass


class PreconditionError(InputError):
    pass


class StructuralError(InputError):
    pass


class NumericError(SdpruneError, ArithmeticError):
    exit_code = 3


class DivergenceError(NumericError):
    def __init__(self, message: str, step: Optional[int] = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class FixturePreconditionError(SdpruneError):
    exit_code = 4


class SignCrossingError(FixturePreconditionError):
    def __init__(self, crossing_time: float, group: int):
        super().__init__(f"group {group} changes sign near t={crossing_time:.6g}")
        self.crossing_time = crossing_time
        self.group = group
