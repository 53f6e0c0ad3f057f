"""Exception hierarchy shared across the toolkit.

The split mirrors the CLI exit codes: usage errors are caller mistakes
(bad arguments, impossible parameter combinations), validation errors
are malformed input files, and data errors are inputs that are
structurally fine but cannot produce a meaningful result.
"""

from __future__ import annotations


class KnnqeError(Exception):
    """Base class for every error this package raises on purpose."""


class UsageError(KnnqeError, ValueError):
    """The caller asked for something contradictory or out of range."""


class ValidationError(KnnqeError):
    """An input file violates its format contract.

    Carries the individual violations so callers can report all of
    them at once instead of fixing files one line at a time.
    """

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations: list[str] = list(violations or [])

    def __str__(self) -> str:
        base = super().__str__()
        if not self.violations:
            return base
        lines = "\n".join(f"  - {v}" for v in self.violations)
        return f"{base}\n{lines}"


class DataError(KnnqeError):
    """Well-formed input that cannot be processed.

    Examples: an empty datastore, a constant score column fed to a
    correlation, k larger than the number of stored tokens.
    """
