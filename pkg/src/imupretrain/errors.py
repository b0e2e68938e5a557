"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for failures raised by this package."""


class ParseError(PipelineError, ValueError):
    """Malformed input file content."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class EmptyInputError(PipelineError, ValueError):
    """An input source contained no usable samples."""


class UpsamplingError(PipelineError, ValueError):
    """Requested output rate exceeds the source rate."""


class InsufficientDataError(PipelineError, ValueError):
    """Too few windows to perform the requested operation."""


class MissingChannelError(PipelineError, ValueError):
    """A required sensor channel is absent from the layout."""


class NoPeriodError(PipelineError, ValueError):
    """The series carries no detectable periodic component."""


class ConfigError(PipelineError, ValueError):
    """Invalid configuration value; message names the offending field."""


class DegenerateTaskError(PipelineError, ValueError):
    """The training task is degenerate (e.g. a single class)."""


class NumericsError(PipelineError, RuntimeError):
    """A numerical computation produced non-finite or singular results."""


class TrainingDivergedError(NumericsError):
    """Training loss became non-finite."""
