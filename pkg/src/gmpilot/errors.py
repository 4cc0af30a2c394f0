"""Typed errors shared across the engine.

Every operational failure raises one of these; callers match on type, not
on message text. HTTP and CLI layers map the class name into their own
error envelopes.
"""

from __future__ import annotations


class GmpilotError(Exception):
    """Base class for all engine errors."""


# --- corpus store ---------------------------------------------------------

class EmptyBody(GmpilotError):
    """Document body is empty."""


class DuplicateIdWithDifferentContent(GmpilotError):
    """A document id is already stored with different content."""


class UnknownDocument(GmpilotError):
    """No document with the given id."""


# --- ingestion ------------------------------------------------------------

class ObservationTooLarge(GmpilotError):
    """An inspection-report segment exceeds the per-observation size cap."""


class EmptyPairMember(GmpilotError):
    """A Q&A pair has an empty question or answer."""


class WrongKind(GmpilotError):
    """Operation applied to a document of the wrong kind."""


class EmptyEntity(GmpilotError):
    """Entity surface string is empty after trimming."""


class UnknownProposal(GmpilotError):
    """Alignment decision references a proposal key that does not exist."""


class ConflictingDecisions(GmpilotError):
    """The same proposal is merged into two different target groups."""


# --- CFR manifest ---------------------------------------------------------

class ParseError(GmpilotError):
    """Malformed manifest or input record."""


class DuplicatePart(GmpilotError):
    """CFR manifest lists the same part number twice."""


# --- retrieval ------------------------------------------------------------

class DuplicateChunkId(GmpilotError):
    """Two chunks with the same id passed to the indexer."""


class EmptyQuery(GmpilotError):
    """Query is empty or whitespace."""


class EmptyText(GmpilotError):
    """Cannot embed empty text."""


class DimensionMismatch(GmpilotError):
    """Query embedding dimension differs from the index."""


# --- backends -------------------------------------------------------------

class BackendUnavailable(GmpilotError):
    """Remote or scripted backend cannot serve the call."""


class Timeout(BackendUnavailable):
    """Backend did not answer within the configured timeout."""


class ContextOverflow(GmpilotError):
    """Prompt exceeds the model context window; raised before any I/O."""


# --- agent ----------------------------------------------------------------

class QueryAloneExceedsBudget(GmpilotError):
    """Even with all evidence dropped the prompt does not fit the budget."""


class AgentRunError(GmpilotError):
    """Agent errors that carry the partial transcript for inspection."""

    def __init__(self, message: str, transcript=None):
        super().__init__(message)
        self.transcript = transcript


class BudgetExhausted(AgentRunError):
    """Step budget reached before the run could finish."""


class UnparseableFinal(AgentRunError):
    """Backend reply violates the answer schema even after one retry."""


# --- service --------------------------------------------------------------

class SessionBusy(GmpilotError):
    """Session already has a running query."""


class UnknownKind(GmpilotError):
    """Ingest kind is not one of the supported corpus kinds."""
