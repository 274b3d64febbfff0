"""Exception hierarchy.

Every error carries a ``code`` equal to its class name; the SCM uses the
code as the reason in ``Failed(<code>)`` and the event log records it as
the outcome of a failed action.
"""


class FvmError(Exception):
    @property
    def code(self) -> str:
        return type(self).__name__


# namespace
class DuplicateContainerId(FvmError):
    pass


class NoSuchContainer(FvmError):
    pass


class AlreadyDecorated(FvmError):
    pass


class InvalidResourceName(FvmError, ValueError):
    pass


# scm
class ServiceExists(FvmError):
    pass


class MalformedRecord(FvmError, ValueError):
    pass


class NoSuchService(FvmError):
    pass


class DependencyFailed(FvmError):
    pass


class UnknownPid(FvmError):
    pass


class NameNotPending(FvmError):
    pass


class AlreadyRegistered(FvmError):
    pass


class NotInTable(FvmError):
    pass


class WrongState(FvmError):
    pass


class HioDenied(FvmError):
    pass


class ScmUnreachable(FvmError):
    """The SCM control pipe was renamed away from the host object."""


# duplication
class AlreadyDuplicated(FvmError):
    pass


class NotDuplicatedRecord(FvmError):
    pass


class ConflictingPlacement(FvmError):
    pass


class CoreProcessNotDuplicable(FvmError):
    pass


class ImageNotFound(FvmError):
    pass


# hio
class MalformedPattern(FvmError, ValueError):
    pass


class TableFrozen(FvmError):
    pass


# binscan
class BinaryParseError(FvmError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BinarySyntaxError(BinaryParseError):
    pass


class UnknownApi(BinaryParseError):
    pass


class BadStringIndex(BinaryParseError):
    pass


class StackUnderflow(FvmError):
    pass


# harness
class ScenarioParseError(FvmError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ScenarioAssertionError(FvmError, AssertionError):
    """A scenario ``ASSERT``/``EXPECT`` did not hold."""

    def __init__(self, line: int, command: str, expected, actual):
        self.line = line
        self.command = command
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"line {line}: {command!r}: expected {expected!r}, got {actual!r}"
        )

    @property
    def code(self) -> str:
        return "AssertionFailed"
