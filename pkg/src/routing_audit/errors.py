"""Exception taxonomy shared across the package.

Each branch maps to one CLI exit-code class, so library code should raise
the most specific type that applies rather than bare ValueError.
"""

from __future__ import annotations


class RoutingAuditError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(RoutingAuditError, ValueError):
    """An argument is outside the documented domain of an operation."""


class DataError(RoutingAuditError):
    """Input files or records are malformed, missing, or inconsistent."""


class ProviderError(RoutingAuditError):
    """A scoring provider failed: transport, protocol, or missing record."""


class MissingRecordError(ProviderError, KeyError):
    """A file-cache provider has no record for the requested instance."""

    def __init__(self, instance_id: str):
        super().__init__(instance_id)
        self.instance_id = instance_id

    def __str__(self) -> str:  # KeyError quotes its arg; keep message readable
        return f"no cached record for instance {self.instance_id!r}"


class InvariantViolation(RoutingAuditError):
    """A mathematical invariant that must hold by construction failed."""


class GateGapUnavailableError(RoutingAuditError):
    """A record holds no token outside the candidate set, so the gate gap
    and the 2A/2B verdict cannot be computed for it."""


class ValueGapUnavailableError(DomainError):
    """Fewer than two candidate scores are present, so the value gap is
    undefined."""


class DpiViolationWarning(UserWarning):
    """A measured information quantity exceeds the bound it is supposed to
    be processed from, beyond numerical tolerance."""
