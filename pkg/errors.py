"""Exception hierarchy shared by every retrieval module.

The CLI maps ConfigError (and argparse failures) to the usage exit code and
every other RetrievalError to the runtime exit code.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional


class RetrievalError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(RetrievalError, ValueError):
    """A corpus, qrels, run, pairs or vocabulary file does not parse."""

    def __init__(self, path: str | Path, line_no: Optional[int], reason: str):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        where = f"{self.path}:{line_no}" if line_no is not None else self.path
        super().__init__(f"{where}: {reason}")


class DuplicateIdError(FormatError):
    def __init__(self, path: str | Path, line_no: int, kind: str, item_id: str):
        self.item_id = item_id
        super().__init__(path, line_no, f"duplicate {kind} id {item_id!r}")


class ConfigError(RetrievalError, ValueError):
    """Unknown config key, out-of-range value or missing mandatory setting."""


class IndexStateError(RetrievalError):
    """Retrieval attempted against an empty index or document set."""


class TrainingError(RetrievalError):
    """Training cannot proceed (no pairs, non-finite loss or gradient)."""


class CheckpointError(RetrievalError):
    """An artifact's header does not match the current vocabulary or format."""
