"""Exceptions raised by robust_hedge.

Two families matter to callers: ConfigError for bad input (exit code 2 on
the command line) and NumericError for computations that could not be
completed (exit code 3). Everything derives from RobustHedgeError.
"""

EXIT_SUCCESS = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class RobustHedgeError(Exception):
    """Base class of every error raised by this package"""

    exit_code = 1


class ConfigError(RobustHedgeError, ValueError):
    """Invalid configuration, arguments or input data"""

    exit_code = EXIT_CONFIG


class NumericError(RobustHedgeError, ArithmeticError):
    """A numeric procedure failed to produce a usable result"""

    exit_code = EXIT_NUMERIC


class GridError(ConfigError):
    pass


class QuadratureError(NumericError):
    pass


class DivergenceError(NumericError):
    """A simulated or integrated path left the representable range"""

    def __init__(self, msg, time=None):
        super().__init__(msg)
        self.time = time


class ContaminationError(ConfigError):
    """A contamination functional exceeded its declared bound"""

    pass


class EllipticityError(NumericError):
    pass


class ReconstructionError(NumericError):
    def __init__(self, msg, node=None):
        super().__init__(msg)
        self.node = node


class SingularMatrixError(NumericError):
    pass


class InfeasibleTruncationError(NumericError):
    """The clipping level is too small for the standardizing equation"""

    pass


class ConvergenceError(NumericError):
    """An iteration stopped without meeting its tolerance

    residual is the last residual norm, trace the sequence of them.
    """

    def __init__(self, msg, residual=None, trace=None):
        super().__init__(msg)
        self.residual = residual
        self.trace = list(trace or [])


class CStarError(NumericError):
    def __init__(self, msg, curve=None):
        super().__init__(msg)
        self.curve = list(curve or [])


class UnsupportedCaseError(ConfigError):
    pass


class LatticeError(ConfigError):
    def __init__(self, msg, suggested_steps=None):
        super().__init__(msg)
        self.suggested_steps = suggested_steps


class StudyError(NumericError):
    pass


class StageError(RobustHedgeError):
    """A pipeline stage failed; the exit code follows the cause"""

    def __init__(self, stage, cause):
        super().__init__("Stage '{}' failed: {}".format(stage, cause))
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", EXIT_NUMERIC)
