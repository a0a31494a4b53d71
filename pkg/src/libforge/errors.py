"""Exception hierarchy shared across the package.

Everything raised on purpose derives from LibforgeError so callers can
catch one base type at process boundaries (CLI, worker pools).
"""


class LibforgeError(Exception):
    """Base class for all libforge errors."""


class InvalidTask(LibforgeError):
    """A task manifest violates its invariants; carries the violation list."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class InvalidCandidate(LibforgeError):
    """A candidate is structurally unusable (e.g. empty rewritten map)."""


class ParseError(LibforgeError):
    """Subject-language source failed to parse.

    Signals that the candidate carrying the source must be discarded.
    """

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        loc = f" at line {line}" + (f", col {col}" if col is not None else "") if line else ""
        super().__init__(f"{message}{loc}")
        self.line = line
        self.col = col


class ProtocolError(LibforgeError):
    """A sampled completion does not follow the fenced-section output protocol."""


class UnknownTokenizer(LibforgeError):
    """count_tokens was asked for a tokenizer id that is not registered."""


class EndpointUnavailable(LibforgeError):
    """A model endpoint could not be reached after bounded retries."""


class BudgetExceeded(LibforgeError):
    """The configured request budget for the gateway has been exhausted."""


class ContextOverflow(LibforgeError):
    """prefix+suffix does not fit the scorer's context budget."""


class CacheCorrupted(LibforgeError):
    """A cache file's embedded hash does not match its payload."""


class DimensionMismatch(LibforgeError):
    """Embedding vectors of differing dimension were mixed."""


class WorkspaceError(LibforgeError):
    """The test harness could not materialize or clean a workspace."""


class BackendProtocolError(LibforgeError):
    """The test runner backend produced malformed output."""


class UnitMismatch(LibforgeError):
    """Two TestOutcomes for different units were compared."""


class InsufficientSamples(LibforgeError):
    """best_at_k was asked for k larger than the number of feasible samples."""


class DisconnectedGraph(LibforgeError):
    """The pairwise-comparison graph is not connected; strengths are not identified."""


class IncompleteRun(LibforgeError):
    """A run directory is missing artifacts required for analysis."""
