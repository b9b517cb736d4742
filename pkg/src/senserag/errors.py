"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SenseRagError(Exception):
    """Base class for all package errors."""


# --- knowledge store ---

class InvariantViolation(SenseRagError):
    """A record field violates its type invariant."""

    def __init__(self, field: str, message: str = ""):
        self.field = field
        super().__init__(f"invariant violated on field '{field}'" + (f": {message}" if message else ""))


class EpochOutOfBounds(SenseRagError):
    """Record timestamp falls outside the configured dataset epoch."""


class UnknownTable(SenseRagError):
    """Table name is not part of the schema."""


class DanglingReference(SenseRagError):
    """A harmonized record points at a structured row that does not exist."""


class StoreFrozen(SenseRagError):
    """Write attempted on an immutable snapshot handle."""


# --- ingestion ---

class UnknownUnit(SenseRagError):
    """Declared unit is not in the supported unit table."""


class NonFiniteValue(SenseRagError):
    """A value to normalize is NaN or infinite."""


class AllMissing(SenseRagError):
    """A series has no known points to interpolate from."""


class EmptyGrid(SenseRagError):
    """Alignment reference grid contains no instants."""


class StageOrderViolation(SenseRagError):
    """Fusion pipeline stages are not in denoise -> standardize -> align -> format order."""


class NoOverlappingTimestamps(SenseRagError):
    """The two modality streams share no timestamps to pair."""


class SchemaMismatch(SenseRagError):
    """CSV row does not match the canonical schema."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class IoFailure(SenseRagError):
    """File could not be read or written."""


# --- query engine ---

class ParseError(SenseRagError):
    """Natural-language query text does not match the constrained grammar.

    ``position`` is the character offset where matching failed and
    ``expected`` lists what the grammar would have accepted there.
    """

    def __init__(self, position: int, expected: tuple[str, ...], message: str = ""):
        self.position = position
        self.expected = expected
        detail = message or f"expected one of: {', '.join(expected)}"
        super().__init__(f"parse error at position {position}: {detail}")


class UnknownField(SenseRagError):
    """Projection references a field that does not exist in the target table."""


# --- RAG cycle ---

class EgoNotFound(SenseRagError):
    """The ego vehicle has no record at the requested instant."""


class EndpointUnavailable(SenseRagError):
    """The LLM endpoint failed after all configured retries."""


class MalformedPrediction(SenseRagError):
    """Model output could not be parsed into the required trajectory format."""

    def __init__(self, raw_text: str, reason: str):
        self.raw_text = raw_text
        self.reason = reason
        super().__init__(f"malformed prediction: {reason}")


# --- evaluation ---

class LengthMismatch(SenseRagError):
    """Predicted and ground-truth trajectories differ in length."""


class NoScenarios(SenseRagError):
    """Experiment configuration produced an empty scenario list."""


class ConfigError(SenseRagError):
    """Run configuration file is missing or invalid."""
