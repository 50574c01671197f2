"""Exception types shared across the package.

Every error raised by library code derives from :class:`TopicsurvError` so
callers (and the CLI) can distinguish bad input from numerical trouble.  The
``stage`` attribute is filled in by the pipeline when an error bubbles up
through orchestration, so a failure inside, say, basis selection is reported
as such instead of as a bare low-level message.
"""

from __future__ import annotations


class TopicsurvError(Exception):
    """Base class for all errors raised by this package."""

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        base = super().__str__()
        if self.stage:
            return f"[{self.stage}] {base}"
        return base


class InputError(TopicsurvError):
    """Malformed or inconsistent user input (files, config, arguments)."""


class IngestError(InputError):
    """A data file failed validation during ingestion."""


class SchemaError(InputError):
    """A clinical schema file is malformed or disagrees with its data."""


class NumericalError(TopicsurvError):
    """A numerical procedure failed (divergence, non-finite objective)."""


class ConvergenceError(NumericalError):
    """An iterative fit did not reach its convergence criterion."""


class PersistenceError(TopicsurvError):
    """A saved artifact could not be read back."""


class FormatVersionError(PersistenceError):
    """A saved artifact declares an unsupported format version."""


class ChecksumError(PersistenceError):
    """A saved artifact's content does not match its recorded checksum."""
