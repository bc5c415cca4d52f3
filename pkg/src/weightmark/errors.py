"""Exception hierarchy shared by every module.

Each class maps to one failure family; the CLI turns families into exit codes.
"""


class WatermarkError(Exception):
    """Base class for all library errors."""


class InvalidArgument(WatermarkError, ValueError):
    pass


class DegenerateInput(WatermarkError, ArithmeticError):
    """A LayerNorm input vector had zero variance."""


class FormatError(WatermarkError):
    """A model directory or keystore file is malformed."""


class GenerationFailure(WatermarkError, ArithmeticError):
    """Random matrix generation exhausted its retries."""


class SingularMatrix(WatermarkError, ArithmeticError):
    pass


class ConditioningFailure(WatermarkError, ArithmeticError):
    """No permutation draw produced a solve block under the condition threshold."""


class AmbiguousRecovery(WatermarkError):
    """Column matching did not produce a bijection."""
