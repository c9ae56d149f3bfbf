"""Exception types shared across the toolkit."""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all toolkit-specific failures."""


class ShapeError(ToolkitError):
    """Tensor arguments have incompatible or invalid shapes."""


class ContractError(ToolkitError):
    """A documented precondition was violated by the caller."""


class ConfigError(ToolkitError):
    """A configuration value is missing, malformed, or inconsistent."""


class DegenerateInputError(ToolkitError):
    """Numerically degenerate input, e.g. a zero-norm vector."""


class FileFormatError(ToolkitError):
    """A file exists but its contents do not match the expected format."""


class TransportError(ToolkitError):
    """A chat backend could not be reached or returned a broken envelope."""


class TrainingDivergedError(ToolkitError):
    """Training produced a non-finite loss and was aborted."""


class GenerationFormatError(ToolkitError):
    """A generated or stored record failed validation.

    ``violation`` is a short machine-readable tag: one of "unparseable",
    "missing_field", "negative_count", "level_order", "empty_text",
    "duplicate_negative". ``raw`` carries the offending text when available
    and ``line`` the 1-based line number for file-backed records.
    """

    def __init__(
        self,
        violation: str,
        message: str = "",
        raw: str | None = None,
        line: int | None = None,
    ):
        self.violation = violation
        self.raw = raw
        self.line = line
        detail = message or violation
        if line is not None:
            detail = f"line {line}: {detail}"
        super().__init__(detail)
