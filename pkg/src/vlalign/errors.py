"""Exception hierarchy. Every error carries a stable machine-readable code."""


class EngineError(Exception):
    """Base class for all errors raised by this package."""

    code = "engine_error"
    exit_code = 1


class FormatError(EngineError):
    """Container bytes do not match the declared format (magic/version/tag)."""

    code = "format_error"
    exit_code = 2


class ContainerIOError(EngineError):
    """Truncated payload, unreadable or unwritable path."""

    code = "io_error"
    exit_code = 2


class ValidationError(EngineError):
    """An object or argument violates a declared invariant."""

    code = "validation_error"
    exit_code = 2


class DegenerateInputError(EngineError):
    """Numerically degenerate input, e.g. a zero row fed to normalization."""

    code = "degenerate_input"
    exit_code = 2


class DegenerateSpanError(DegenerateInputError):
    """Text span too low-rank for the requested projection variant."""

    code = "degenerate_span"


class DegenerateProjectionError(DegenerateInputError):
    """A row lies entirely outside the projection span."""

    code = "degenerate_projection"


class SolverError(EngineError):
    """Iterative solver failed to reach tolerance. Carries the worst residual."""

    code = "solver_error"

    def __init__(self, message, worst_residual=None):
        super().__init__(message)
        self.worst_residual = worst_residual


class SelfTrainAborted(EngineError):
    """Self-training aborted mid-run; carries the partial report for checkpointing."""

    code = "selftrain_aborted"

    def __init__(self, message, partial_report=None, states=None):
        super().__init__(message)
        self.partial_report = partial_report
        self.states = states
