"""Exception hierarchy shared across the advisor."""


class AdvisorError(Exception):
    """Base class for all advisor errors."""


class ConfigError(AdvisorError):
    """Bad or inconsistent configuration / input files."""


class ParseError(AdvisorError):
    """Malformed SQL or SQL outside the supported surface."""

    def __init__(self, message: str, sql: str | None = None, pos: int | None = None):
        if pos is not None:
            message = f"{message} (at offset {pos})"
        super().__init__(message)
        self.sql = sql
        self.pos = pos


class UnknownColumn(AdvisorError):
    """Column or table has no match in the catalog."""


class AmbiguousColumn(AdvisorError):
    """Unqualified column matches more than one table in scope."""


class EstimatorUnavailable(AdvisorError):
    """Selectivity estimator backend cannot be reached."""


class PredicateError(AdvisorError):
    """Selectivity probe query failed."""


class DuplicateIndex(AdvisorError):
    """Hypothetical index already exists in the session."""


class IndexNotFound(AdvisorError):
    """Hypothetical index not present in the session."""


class BackendError(AdvisorError):
    """Database backend failure (connection, EXPLAIN, extension)."""


class LLMError(AdvisorError):
    """LLM transport or quota failure."""


class EmptyCompletion(LLMError):
    """Backend returned no usable completion text."""


class NoQueriesParsed(LLMError):
    """Synthesis completions contained no SQL statements."""


class MatchEmpty(AdvisorError):
    """Demonstration pool empty after exclusion filters."""


class EmptyOptions(AdvisorError):
    """Best-of-N called with no candidate options."""


class ZeroBaseline(AdvisorError):
    """Relative reduction undefined for a non-positive baseline cost."""
