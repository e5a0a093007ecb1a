from typing import Any
from typing import Optional
from typing import Sequence


class CftpError(Exception):
    """Base class of every error raised by ips_cftp."""


class InvalidQuery(CftpError):
    pass


class UnsortedEvents(CftpError):
    pass


class ValidationError(CftpError):
    """A model description or setting failed validation.

    :param message: human readable description of the problem
    :param field: dotted path of the offending field, when known
    """

    def __init__(self, message: str, field: Optional[str] = None) -> None:
        self.field = field
        if field:
            message = f'{field}: {message}'
        super().__init__(message)


class PositiveRatesMissing(CftpError):
    pass


class ZeroTotalRate(CftpError):
    pass


class ModelShapeMismatch(CftpError):
    pass


class ThetaContainmentError(CftpError):
    pass


class BudgetExceeded(CftpError):
    """A cap was hit before the construction terminated.

    `partial` holds whatever was built so far (a trace, a lock tree or a
    closure) so callers can report diagnostics about the failed sample.
    """

    def __init__(self, message: str, partial: Any = None) -> None:
        super().__init__(message)
        self.partial = partial


class CouplingViolation(CftpError):
    """Initial configurations disagreed on a value that should be coupled."""

    def __init__(self, message: str, values: Sequence[int] = ()) -> None:
        super().__init__(message)
        self.values = tuple(values)


class MissingEValue(CftpError):
    pass


class ScheduleIncomplete(CftpError):
    pass


class CapExceeded(CftpError):
    pass


class SingularSystem(CftpError):
    pass


class SupportMismatch(CftpError):
    pass
