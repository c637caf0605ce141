"""Exception hierarchy shared by every segchain module."""

from __future__ import annotations


class SegchainError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SegchainError):
    """A block or segment violates one of its structural invariants."""

    def __init__(self, reason: str, *, segment_id: int | None = None,
                 level: int | None = None, field: str | None = None):
        self.reason = reason
        self.segment_id = segment_id
        self.level = level
        self.field = field
        where = []
        if segment_id is not None:
            where.append(f"segment {segment_id}")
        if level is not None:
            where.append(f"level {level}")
        if field is not None:
            where.append(f"field {field}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + reason)


class LinkageError(ValidationError):
    """An activation block does not point at the expected predecessor digest."""

    def __init__(self, expected: bytes, found: bytes, *, segment_id: int | None = None):
        self.expected = expected
        self.found = found
        super().__init__(
            f"predecessor mismatch: expected {expected.hex()}, found {found.hex()}",
            segment_id=segment_id, level=0, field="predecessor_hash",
        )


class OrderingError(SegchainError):
    """Segments, blocks or samples arrived out of their required order."""


class DecodeError(SegchainError):
    """Bytes could not be parsed as the documented binary layout."""


class IntegrityError(SegchainError):
    """Recomputed hashes disagree with the recorded ones."""


class ProvenanceError(SegchainError):
    """A snapshot is internally valid but does not match the trusted head."""


class AvailabilityError(SegchainError):
    """Requested data is not retained by the store."""


class AuthenticationError(SegchainError):
    """A signature did not verify under the genesis node's key."""


class RoleError(SegchainError):
    """An operation was invoked on a node whose role does not allow it."""


class RoutingError(SegchainError):
    """A message was addressed to, or sent from, an unregistered peer."""


class BootstrapError(SegchainError):
    """A joining node could not complete synchronisation."""


class MissingSegmentError(BootstrapError):
    """No peer was able to serve a historical segment."""

    def __init__(self, segment_id: int):
        self.segment_id = segment_id
        super().__init__(f"no peer could serve segment {segment_id}")


class ConfigError(SegchainError):
    """A configuration value is out of its allowed range."""


class SimTimeout(SegchainError):
    """A simulation did not reach its condition within the tick budget."""

    def __init__(self, message: str, diagnostics: object = None):
        self.diagnostics = diagnostics
        super().__init__(message if diagnostics is None else f"{message}; {diagnostics}")
