"""Exception hierarchy shared by the analysis modules and the CLI."""
from typing import Optional


class GazelabError(Exception):
    """Root of every error the toolkit raises on purpose."""

    exit_code = 2


class UsageError(GazelabError):
    """Bad invocation or invalid configuration."""

    exit_code = 1


class DataError(GazelabError, ValueError):
    """Input data violates a documented contract."""

    exit_code = 2


class RecordingFormatError(DataError):
    """A sensor log row could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class BaselineError(DataError):
    """No valid pupil samples inside the baseline window."""


class PresetMismatchError(DataError):
    """Events were detected under a different preset than the catalog declares."""


class LeakageError(DataError):
    """A participant group appears on both sides of a split."""


class DegenerateTestError(DataError):
    """A statistical test has no information to work with."""


class ProvenanceError(DataError):
    """An artifact was produced under a different config than the current one."""


class QualityGateError(GazelabError):
    """A recording failed the tracking-ratio gate."""

    exit_code = 3

    def __init__(self, message: str, excluded: Optional[list] = None):
        self.excluded = excluded or []
        super().__init__(message)
