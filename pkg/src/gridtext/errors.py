"""Exception hierarchy shared across the package."""

from __future__ import annotations


class GridTextError(Exception):
    """Base class for all package errors."""


class ParseError(GridTextError):
    """A corpus record or config file is malformed."""


class IngestionError(GridTextError):
    """Corpus-level problem: duplicate ids, empty corpus side, etc."""


class UnknownIdError(GridTextError):
    """An id could not be resolved against the corpus or graph."""


class BipartiteError(GridTextError):
    """An edge would connect two nodes of the same kind."""


class EmbeddingError(GridTextError):
    """Text could not be embedded (e.g. empty after tokenization)."""


class ContractError(GridTextError):
    """A caller violated an operation precondition."""


class IndexBuildError(GridTextError):
    """An index could not be built from the given graph."""


class TransportError(GridTextError):
    """A remote model service call failed after retries.

    Carries retry metadata so callers can report or fall back.
    """

    def __init__(self, message: str, *, endpoint: str | None = None, attempts: int = 0):
        super().__init__(message)
        self.endpoint = endpoint
        self.attempts = attempts


class AcceptanceViolation(GridTextError):
    """An evaluation report fell below a configured threshold."""
