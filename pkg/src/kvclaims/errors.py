"""Exception types raised across the runtime."""
from __future__ import annotations


class KVClaimError(Exception):
    """Base class for all runtime errors."""


class DuplicateClaimId(KVClaimError):
    pass


class InvalidFootprint(KVClaimError):
    pass


class UnknownClaim(KVClaimError):
    pass


class IllegalTransition(KVClaimError):
    def __init__(self, claim_id: str, source: str, target: str):
        super().__init__(f"{claim_id}: illegal transition {source} -> {target}")
        self.claim_id = claim_id
        self.source = source
        self.target = target


class InsufficientFree(KVClaimError):
    pass


class UnknownRequest(KVClaimError):
    pass


class ClaimNotReleased(KVClaimError):
    pass


class NoChunksRemaining(KVClaimError):
    pass


class EmptySchedule(KVClaimError):
    pass


class PositionOutOfRange(KVClaimError):
    pass


class UnknownPolicy(KVClaimError):
    pass


class InvalidEvent(KVClaimError):
    pass


class MalformedLine(KVClaimError):
    def __init__(self, lineno: int, detail: str):
        super().__init__(f"line {lineno}: {detail}")
        self.lineno = lineno


class OutOfOrderStep(KVClaimError):
    def __init__(self, lineno: int, step: int, previous: int):
        super().__init__(f"line {lineno}: step {step} precedes earlier step {previous}")
        self.lineno = lineno


class ConfigInvalid(KVClaimError):
    def __init__(self, path: str, detail: str):
        super().__init__(f"{path}: {detail}")
        self.path = path


class MissingFixture(KVClaimError):
    pass


class InvariantViolation(AssertionError):
    """Raised by a validating pool when block accounting breaks."""
