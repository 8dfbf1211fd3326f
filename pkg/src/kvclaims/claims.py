"""Resident claims: schema, protection modes and the lifecycle state machine."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from . import telemetry as tm
from .errors import DuplicateClaimId, IllegalTransition, InvalidFootprint, UnknownClaim
from .materialization import MaterializationPredicate
from .telemetry import ClaimEvent, TraceSink


class ProtectionMode(str, Enum):
    SOFT_PRIORITY = "soft_priority"
    HARD_PROTECTED = "hard_protected"
    DEMOTABLE = "demotable"
    OFFLOADABLE = "offloadable"
    EXPIRING = "expiring"
    BEST_EFFORT = "best_effort"


# Modes whose blocks are excluded from eviction until an explicit release.
EXCLUDING_MODES = frozenset(
    {ProtectionMode.HARD_PROTECTED, ProtectionMode.DEMOTABLE, ProtectionMode.EXPIRING}
)


class ClaimState(str, Enum):
    SUBMITTED = "submitted"
    ACCEPTED = "accepted"
    MATERIALIZED = "materialized"
    DEMOTED = "demoted"
    EXPIRED = "expired"
    REFUSED = "refused"
    HARMED = "harmed"


class Verdict(str, Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    CONDITIONALLY_ACCEPTED = "conditionally_accepted"


S = ClaimState
LEGAL_TRANSITIONS: dict[ClaimState, frozenset[ClaimState]] = {
    S.SUBMITTED: frozenset({S.ACCEPTED, S.REFUSED}),
    S.ACCEPTED: frozenset({S.MATERIALIZED, S.DEMOTED, S.EXPIRED, S.HARMED}),
    S.MATERIALIZED: frozenset({S.DEMOTED, S.EXPIRED, S.HARMED}),
    S.DEMOTED: frozenset(),
    S.EXPIRED: frozenset(),
    S.REFUSED: frozenset(),
    S.HARMED: frozenset(),
}
TERMINAL_STATES = frozenset(s for s, succ in LEGAL_TRANSITIONS.items() if not succ)
LIVE_STATES = frozenset({S.ACCEPTED, S.MATERIALIZED})
RELEASED_STATES = frozenset({S.DEMOTED, S.EXPIRED})

TRANSITION_EVENTS = {
    S.ACCEPTED: tm.CLAIM_ACCEPTED,
    S.REFUSED: tm.CLAIM_REJECTED,
    S.MATERIALIZED: tm.CLAIM_MATERIALIZED,
    S.DEMOTED: tm.CLAIM_DEMOTED,
    S.EXPIRED: tm.CLAIM_EXPIRED,
    S.HARMED: tm.CLAIM_HARMED,
}


def is_legal(source: ClaimState, target: ClaimState) -> bool:
    return ClaimState(target) in LEGAL_TRANSITIONS[ClaimState(source)]


@dataclass(frozen=True)
class CacheIdentity:
    """Cache-equivalence identity: when a cached prefix is reusable at all."""

    cache_key_domain: str = "default"
    model_id: str = "model"
    token_hash_domain: str = "sha256"
    namespace_salt: str = ""
    block_size_tokens: int = 16
    adapter_id: str | None = None
    kv_format: str | None = None

    def __post_init__(self) -> None:
        if self.block_size_tokens <= 0:
            raise ValueError("block_size_tokens must be positive")

    @property
    def salted(self) -> bool:
        return bool(self.namespace_salt)

    def compatible(self, other: "CacheIdentity") -> bool:
        # Dataclass equality compares every field, optionals included;
        # None == None covers the both-absent case.
        return self == other

    def unsalted(self) -> "CacheIdentity":
        return CacheIdentity(
            self.cache_key_domain,
            self.model_id,
            self.token_hash_domain,
            "",
            self.block_size_tokens,
            self.adapter_id,
            self.kv_format,
        )


@dataclass(frozen=True)
class ResidentClaimInput:
    claim_id: str
    owner_scope: str
    object_id: str
    materialization_predicate: MaterializationPredicate
    footprint_blocks: int
    protection_mode: ProtectionMode = ProtectionMode.HARD_PROTECTED
    cache_identity: CacheIdentity = field(default_factory=CacheIdentity)
    duration_steps: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "protection_mode", ProtectionMode(self.protection_mode))
        if self.duration_steps is not None and self.duration_steps <= 0:
            raise ValueError("duration_steps must be positive when given")


@dataclass(frozen=True)
class ClaimDecision:
    verdict: Verdict
    decision_step: int
    reason: str


@dataclass
class Claim:
    """A submitted claim together with its decision and current state."""

    spec: ResidentClaimInput
    decision: ClaimDecision
    state: ClaimState
    accept_order: int = -1
    history: list[tuple[int, ClaimState]] = field(default_factory=list)

    @property
    def claim_id(self) -> str:
        return self.spec.claim_id

    @property
    def mode(self) -> ProtectionMode:
        return self.spec.protection_mode

    @property
    def live(self) -> bool:
        return self.state in LIVE_STATES

    @property
    def released(self) -> bool:
        return self.state in RELEASED_STATES

    @property
    def excluded(self) -> bool:
        return self.live and self.mode in EXCLUDING_MODES

    @property
    def carries_obligation(self) -> bool:
        # best_effort claims are telemetry only; losing them is not harm.
        return self.live and self.mode is not ProtectionMode.BEST_EFFORT


class ClaimRegistry:
    """Owns every claim submitted to one runtime instance."""

    def __init__(self, sink: TraceSink | None = None):
        self.sink = sink if sink is not None else TraceSink()
        self._claims: dict[str, Claim] = {}
        self._accepted = 0

    def __contains__(self, claim_id: str) -> bool:
        return claim_id in self._claims

    def __iter__(self):
        return iter(self._claims.values())

    def get(self, claim_id: str) -> Claim:
        try:
            return self._claims[claim_id]
        except KeyError:
            raise UnknownClaim(claim_id) from None

    def state(self, claim_id: str) -> ClaimState:
        return self.get(claim_id).state

    def states(self) -> dict[str, ClaimState]:
        return {cid: c.state for cid, c in self._claims.items()}

    def submit_claim(
        self,
        spec: ResidentClaimInput,
        usable_blocks: int,
        step: int,
        verdict_override: Verdict | None = None,
    ) -> ClaimDecision:
        """Admit or reject a claim under the default footprint policy.

        The default policy accepts any claim whose footprint fits the usable
        pool. ``verdict_override`` lets a scenario inject a different verdict,
        which is the only way to obtain ``conditionally_accepted``.
        """
        if spec.claim_id in self._claims:
            raise DuplicateClaimId(spec.claim_id)
        if not isinstance(spec.footprint_blocks, int) or spec.footprint_blocks < 1:
            raise InvalidFootprint(f"{spec.claim_id}: footprint_blocks={spec.footprint_blocks!r}")
        if step < 0:
            raise ValueError("step must be non-negative")

        self._emit(tm.CLAIM_SUBMITTED, spec.claim_id, step, self._describe(spec))
        if verdict_override is not None:
            verdict = Verdict(verdict_override)
            reason = "scenario_override"
        elif spec.footprint_blocks > usable_blocks:
            verdict, reason = Verdict.REJECTED, "footprint_exceeds_usable_capacity"
        else:
            verdict, reason = Verdict.ACCEPTED, "fits_usable_capacity"

        decision = ClaimDecision(verdict, step, reason)
        claim = Claim(spec, decision, S.SUBMITTED, history=[(step, S.SUBMITTED)])
        self._claims[spec.claim_id] = claim
        if verdict is Verdict.ACCEPTED:
            self._move(claim, S.ACCEPTED, step, {"reason": reason, **self._describe(spec)})
            claim.accept_order = self._accepted
            self._accepted += 1
        elif verdict is Verdict.REJECTED:
            self._move(claim, S.REFUSED, step, {"reason": reason})
        else:
            self._emit(
                "claim_conditionally_accepted", spec.claim_id, step, {"reason": reason}
            )
        return decision

    def transition(
        self, claim_id: str, target: ClaimState, step: int, **context: Any
    ) -> ClaimState:
        claim = self.get(claim_id)
        target = ClaimState(target)
        if not is_legal(claim.state, target):
            raise IllegalTransition(claim_id, claim.state.value, target.value)
        self._move(claim, target, step, context)
        return target

    def tick_expiry(self, current_step: int) -> list[str]:
        """Expire every live claim whose duration window has closed.

        The window is ``[decision_step, decision_step + duration_steps)``.
        """
        expired = []
        for claim in sorted(self._claims.values(), key=lambda c: c.accept_order):
            duration = claim.spec.duration_steps
            if not claim.live or duration is None:
                continue
            if claim.decision.decision_step + duration <= current_step:
                self._move(claim, S.EXPIRED, current_step, {"cause": "duration"})
                expired.append(claim.claim_id)
        return expired

    def live_claims(self) -> list[Claim]:
        return sorted((c for c in self._claims.values() if c.live), key=lambda c: c.accept_order)

    def _move(self, claim: Claim, target: ClaimState, step: int, context: dict) -> None:
        claim.state = target
        claim.history.append((step, target))
        self._emit(TRANSITION_EVENTS[target], claim.claim_id, step, context)

    def _emit(self, kind: str, claim_id: str, step: int, context: dict) -> None:
        known = {k: context.pop(k) for k in list(context) if k in _EVENT_FIELDS}
        self.sink.emit(ClaimEvent(kind, claim_id=claim_id, step=step, **known, extra=context))

    @staticmethod
    def _describe(spec: ResidentClaimInput) -> dict[str, Any]:
        return {
            "object_id": spec.object_id,
            "protection_mode": spec.protection_mode.value,
            "footprint_blocks": spec.footprint_blocks,
        }


_EVENT_FIELDS = {
    "request_id",
    "blocking_claim_ids",
    "leading_blocks",
    "required_leading_blocks",
    "satisfied",
    "feasibility",
    *tm.CAPACITY_FIELDS,
}
