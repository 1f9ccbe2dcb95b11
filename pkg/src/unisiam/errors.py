"""Exception types shared across the package.

Every checked failure mode maps to one of these so callers (and the CLI)
can translate them into exit codes without string matching.
"""

from __future__ import annotations


class UnisiamError(Exception):
    """Base class for all package errors."""


class ContractViolationError(UnisiamError):
    """An operation was called with arguments that violate its contract.

    Raised for shape mismatches, out-of-range hyperparameters, empty
    negative sets, non-finite values in debug mode, and similar
    programming errors. These indicate a bug at the call site, not bad
    user data.
    """


class DegenerateInputError(UnisiamError):
    """Numerically degenerate data made the requested result meaningless.

    Example: normalizing a row whose norm is ~0.
    """


class DivergenceError(UnisiamError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, log=None):
        super().__init__(message)
        # Partial training log attached so callers can inspect the run
        # up to the failing step.
        self.log = log


class FormatError(UnisiamError):
    """A binary file did not match its declared layout.

    Carries the byte offset at which decoding failed.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(UnisiamError):
    """Bad configuration: unknown key, unparseable value, out-of-range
    setting, or a missing input file referenced by the config."""
