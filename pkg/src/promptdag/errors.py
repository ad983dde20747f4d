"""Exception types shared across the package."""

from __future__ import annotations


class PromptDagError(Exception):
    """Base class for all promptdag errors."""


class CycleError(PromptDagError):
    """An edge insertion or traversal found a directed cycle."""


class UnknownAgentError(PromptDagError):
    """An operation referenced an agent id that is not in the graph."""


class GraphValidationError(PromptDagError):
    """A graph document or builder state violates a structural invariant."""


class MissingScoreError(PromptDagError):
    """A node or edge score required by a solve is absent from its table."""


class FactorHomelessError(PromptDagError):
    """A factor fit no clique during junction-tree assembly (defensive)."""


class TooLargeError(PromptDagError):
    """An instance exceeds the brute-force or clique-tensor size guard."""


class ScorerUnavailableError(PromptDagError):
    """The reward scorer transport failed after retries."""


class MalformedReplyError(PromptDagError):
    """A model reply could not be parsed after retries."""


class VariantCountMismatchError(PromptDagError):
    """A mutation or variation reply contained the wrong number of variants."""


class ParseError(PromptDagError):
    """A configuration or data file is not syntactically valid."""


class ValidationError(PromptDagError):
    """A configuration value is out of range or inconsistent.

    ``field`` carries the dotted path of the offending entry when known.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DuplicateTaskIdError(PromptDagError):
    """Two task records in one batch share an id."""


class MalformedRecordError(PromptDagError):
    """A task record failed to parse; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ExecutorFailure(PromptDagError):
    """An agent execution failed; callers record this as a failed verdict."""


class SchemaMismatchError(PromptDagError):
    """A snapshot document has the wrong version or shape."""


class FrozenStateError(PromptDagError):
    """A mutation was attempted on a frozen optimization state."""


class GatewayError(PromptDagError):
    """Base class for chat gateway failures."""


class GatewayTimeout(GatewayError):
    """The endpoint did not answer within the configured timeout."""


class HttpStatusError(GatewayError):
    """The endpoint answered with a non-retryable or exhausted HTTP status."""

    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"HTTP {status}" + (f": {detail}" if detail else ""))
        self.status = status


class TransportError(GatewayError):
    """The HTTP connection itself failed after retries."""
