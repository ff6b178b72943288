"""Exception hierarchy shared by the protocol library, the simulator and the ``hop`` management command."""
from django.core.exceptions import ImproperlyConfigured

from hop.core import constants


class HopError(Exception):
    exit_code: int = 1


class ConfigurationError(HopError, ImproperlyConfigured):
    exit_code = constants.EXIT_CONFIG_ERROR


class InvalidTopologyError(ConfigurationError):
    pass


class NoPathError(HopError):
    exit_code = constants.EXIT_CONFIG_ERROR


class PreconditionError(HopError):
    exit_code = constants.EXIT_CONFIG_ERROR


class ProtocolViolationError(HopError):
    """Raised when a queue, token or gap invariant is broken.

    :param str message: What went wrong.
    :param trace: The last metric rows recorded before the violation, if known.
    """

    exit_code = constants.EXIT_INVARIANT_VIOLATION

    def __init__(self, message: str, trace: list | None = None) -> None:
        super().__init__(message)
        self.trace = list(trace or [])


class DivergenceError(HopError):
    exit_code = constants.EXIT_DIVERGENCE


class OracleError(HopError):
    pass


class DeadlockError(HopError):
    exit_code = constants.EXIT_DEADLOCK

    def __init__(self, report, log=None) -> None:
        super().__init__(report.describe())
        self.report = report
        self.log = log


class MetricsError(HopError):
    pass


class TraceParseError(HopError):
    exit_code = constants.EXIT_TRACE_PARSE_ERROR


class BoundViolationError(HopError):
    exit_code = constants.EXIT_BOUND_VIOLATION

    def __init__(self, report) -> None:
        super().__init__(report.describe())
        self.report = report


class SuiteFailedError(HopError):
    exit_code = constants.EXIT_SUITE_FAILURE

    def __init__(self, failures: dict[str, Exception]) -> None:
        lines = [f"{name}: {type(error).__name__}: {error}" for name, error in failures.items()]
        super().__init__(f"{len(failures)} run(s) failed:\n" + "\n".join(lines))
        self.failures = failures
