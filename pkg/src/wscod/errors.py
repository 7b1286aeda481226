"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: configuration problems
exit with 2, data problems with 3, backend problems with 4.
"""


class WscodError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(WscodError):
    """Invalid or inconsistent configuration (exit code 2)."""


class DataError(WscodError):
    """Invalid, missing, or malformed input data (exit code 3)."""


class DimensionError(DataError):
    """Array shapes do not match the declared contract."""


class EmptyAnnotationError(DataError):
    """A scribble annotation carries no usable labeled pixels."""


class BackendError(WscodError):
    """A segmenter or agent backend failed (exit code 4)."""


class TransportError(BackendError):
    """Backend call failed at the transport level.

    ``retryable`` and ``attempts`` let an orchestrator decide whether
    re-dispatching the same request makes sense.
    """

    def __init__(self, message: str, *, retryable: bool = True, attempts: int = 1):
        super().__init__(message)
        self.retryable = retryable
        self.attempts = attempts


class NoCandidateError(BackendError):
    """The segmenter returned no candidate masks."""


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4


def exit_code_for(exc: BaseException) -> int:
    """Exit code the CLI should use for ``exc``."""
    if isinstance(exc, ConfigurationError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, BackendError):
        return EXIT_BACKEND
    return 1
