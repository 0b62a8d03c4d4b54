"""Exception hierarchy shared across the toolkit.

The CLI maps these families onto exit codes, so new errors should subclass
one of the bases below rather than raising bare exceptions.
"""


class SemmapError(Exception):
    """Base class for all toolkit errors."""


class FormatError(SemmapError):
    """Malformed file content. Carries per-line diagnostics when available."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        # list of (line_number, message); line_number may be None
        self.diagnostics = list(diagnostics or [])


class ValidationFailure(SemmapError):
    """A dataset or knowledge base failed a hard validity check."""


class NumericalError(SemmapError):
    """Non-convergence or unobservability where a solution is required."""


class UnknownFrameError(SemmapError):
    """A frame name was not found in a transform tree."""

    def __init__(self, frame):
        super().__init__(f"unknown frame: {frame!r}")
        self.frame = frame
