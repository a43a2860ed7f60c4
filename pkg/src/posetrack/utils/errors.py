class DegenerateInput(Exception):
    """Raised when a regression output or matrix cannot be orthonormalized."""

    pass


class DegenerateMesh(Exception):
    """Raised when a mesh has no usable surface area."""

    pass


class ObjParseError(Exception):
    """Raised when a Wavefront OBJ file uses an unsupported or malformed line."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class NonDifferentiablePoint(Exception):
    """Raised when a gradient is requested inside a singular neighborhood"""

    pass


class InsufficientSamples(Exception):
    """Raised when a running statistic has too few samples to standardize."""

    pass


class DimensionMismatch(Exception):
    """Raised when paired maps, masks or frames disagree in size"""

    pass


class IndexOutOfRange(Exception):
    """Raised when a symmetry bank index does not exist."""

    pass


class OutOfFrustum(Exception):
    """Raised when a render produces no foreground pixel."""

    pass


class ConfigError(Exception):
    """Raised when a configuration file or override is invalid."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


class DatasetError(Exception):
    """Raised when a dataset directory or manifest is missing or inconsistent"""

    pass


class ReportIoError(Exception):
    """Raised when a report cannot be written."""

    pass


class GradientCheckFailed(Exception):
    """Raised when an analytic gradient disagrees with finite differences."""

    pass


class TrackingBudgetExceeded(Exception):
    """Raised when a benchmark records more failures than allowed"""

    pass


exception_to_exit_code = {
    ConfigError: 2,
    ObjParseError: 2,
    DatasetError: 2,
    FileNotFoundError: 2,
    ValueError: 2,
    GradientCheckFailed: 1,
    TrackingBudgetExceeded: 1,
    ReportIoError: 1,
}


def exit_code_for(error: BaseException) -> int:
    """
    Look up the process exit code for an exception raised by a subcommand.

    :param error: The exception that ended the subcommand.

    :return: int
    """
    for error_cls, code in exception_to_exit_code.items():
        if isinstance(error, error_cls):
            return code
    return 1
