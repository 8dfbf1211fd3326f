"""Active/resident arbitration.

When protected resident KV plus a request's live KV exceeds usable
capacity, no eviction ranking makes both fit. The arbiter picks one
explicit action per policy and reports it as a claim-level event: serve by
evicting (native), refuse or defer with the blocking claims named, or
relax the blocking claims first.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

from . import telemetry as tm
from .active import (
    ActiveRequest,
    ChunkOutcome,
    RequestStatus,
    complete_request,
    record_chunk,
    schedule_chunk,
)
from .claims import ClaimState
from .errors import UnknownClaim, UnknownPolicy
from .pool import BlockPool
from .telemetry import ClaimEvent

STOP_PROTECTED_REFUSED = "protected_resident_capacity_refused"


class ConflictAction(str, Enum):
    NATIVE_EVICTION = "native_eviction"
    WRITE_NO_ADMIT_ONLY = "write_no_admit_only"
    RESIDENT_VICTIM_EXCLUSION = "resident_victim_exclusion"
    ACTIVE_DEFERRAL = "active_deferral"
    RESIDENT_RESERVE = "resident_reserve"
    RELAX_DEMOTE = "relax_demote"
    RELAX_EXPIRE = "relax_expire"

    @classmethod
    def parse(cls, value: "str | ConflictAction") -> "ConflictAction":
        try:
            return cls(value)
        except ValueError:
            raise UnknownPolicy(str(value)) from None

    @property
    def honors_claims(self) -> bool:
        """Native paths treat future-reuse hints as ordinary cached state."""
        return self not in (ConflictAction.NATIVE_EVICTION, ConflictAction.WRITE_NO_ADMIT_ONLY)


@dataclass(frozen=True)
class FeasibilityReport:
    protected_resident_blocks: int
    active_live_blocks_required: int
    usable_blocks: int
    resident_plus_active: int
    shortfall_blocks: int
    feasible: bool

    @property
    def feasibility(self) -> str:
        return tm.FEASIBLE if self.feasible else tm.INFEASIBLE

    def event_fields(self) -> dict:
        return {
            "protected_resident_blocks": self.protected_resident_blocks,
            "active_live_blocks_required": self.active_live_blocks_required,
            "resident_plus_active_blocks": self.resident_plus_active,
            "usable_blocks": self.usable_blocks,
            "capacity_shortfall_blocks": self.shortfall_blocks,
            "feasibility": self.feasibility,
        }


def check_feasibility(protected: int, active: int, usable: int) -> FeasibilityReport:
    if min(protected, active, usable) < 0:
        raise ValueError("block counts must be non-negative")
    total = protected + active
    shortfall = max(0, total - usable)
    return FeasibilityReport(protected, active, usable, total, shortfall, shortfall == 0)


@dataclass(frozen=True)
class ArbiterOutcome:
    status: RequestStatus
    evicted_block_ids: tuple[int, ...] = ()
    refusal: ClaimEvent | None = None
    live_trajectory: tuple[int, ...] = ()


class Arbiter:
    """Per-runtime arbiter; ``request_chunk`` is the handle chunks go through."""

    def __init__(
        self,
        pool: BlockPool,
        policy: ConflictAction | str = ConflictAction.RESIDENT_VICTIM_EXCLUSION,
        defer_budget: int = 1,
        reserve_blocks: int | None = None,
        relax_claims: Sequence[str] | None = None,
    ):
        self.pool = pool
        self.claims = pool.claims
        self.policy = ConflictAction.parse(policy)
        self.defer_budget = defer_budget
        self.reserve_blocks = reserve_blocks
        self.relax_claims = list(relax_claims) if relax_claims else None
        if self.relax_claims:
            for cid in self.relax_claims:
                if cid not in self.claims:
                    raise UnknownClaim(cid)

    @property
    def gated(self) -> bool:
        return self.policy.honors_claims

    def prepare(self, request: ActiveRequest) -> None:
        if self.policy is ConflictAction.WRITE_NO_ADMIT_ONLY:
            request.set_write_admission(False)

    # -- feasibility -------------------------------------------------------

    def reserved(self) -> tuple[int, list[str]]:
        hard = [c for c in self.claims.live_claims() if c.excluded]
        if self.reserve_blocks is not None:
            return self.reserve_blocks, [c.claim_id for c in hard]
        return sum(c.spec.footprint_blocks for c in hard), [c.claim_id for c in hard]

    def assess(self, request: ActiveRequest) -> tuple[FeasibilityReport, list[str]]:
        if self.policy is ConflictAction.RESIDENT_RESERVE:
            protected, blocking = self.reserved()
        else:
            protected = self.pool.stats().protected_resident_blocks
            blocking = self.pool.blocking_claims()
        report = check_feasibility(protected, request.peak_blocks, self.pool.usable_blocks)
        return report, blocking

    # -- chunk handling ----------------------------------------------------

    def request_chunk(self, request: ActiveRequest, blocks: int, step: int) -> ChunkOutcome:
        self.pool.clock = step
        if self.gated and request.live_blocks == 0:
            gate = self._gate(request, step)
            if gate is not None:
                return gate
        report, _ = self.assess(request)
        alloc = self.pool.allocate_active(
            request.request_id,
            blocks,
            context={"request_id": request.request_id, **report.event_fields()},
        )
        if alloc.allocated:
            record_chunk(request, blocks)
            self.pool.sink.emit(
                ClaimEvent(
                    tm.ACTIVE_ALLOCATED,
                    request_id=request.request_id,
                    step=step,
                    extra={"blocks": blocks, "live_blocks": request.live_blocks},
                )
            )
            return ChunkOutcome("allocated", blocks, request.live_blocks, alloc.evicted_block_ids)
        if self.gated and alloc.blocking_claim_ids:
            gate = self._gate(request, step)
            if gate is not None:
                return gate
        return ChunkOutcome("waiting", 0, request.live_blocks)

    def _gate(self, request: ActiveRequest, step: int) -> ChunkOutcome | None:
        report, blocking = self.assess(request)
        # With nothing to attribute it to, infeasibility is not a resident conflict.
        if report.feasible or not blocking:
            return None
        if self.policy in (ConflictAction.RELAX_DEMOTE, ConflictAction.RELAX_EXPIRE):
            self.relax(self.relax_claims or blocking, request, step)
            return None
        if self.policy is ConflictAction.ACTIVE_DEFERRAL and request.deferrals < self.defer_budget:
            return self._defer(request, report, blocking, step)
        return self._refuse(request, report, blocking, step)

    def relax(self, claim_ids: Iterable[str], request: ActiveRequest, step: int) -> list[str]:
        if self.policy is ConflictAction.RELAX_EXPIRE:
            target, cause = ClaimState.EXPIRED, "expiry"
        else:
            target, cause = ClaimState.DEMOTED, "demotion"
        relaxed = []
        for cid in claim_ids:
            claim = self.claims.get(cid)
            if not claim.live:
                continue
            self.claims.transition(cid, target, step, request_id=request.request_id, cause="relax")
            self.pool.release_blocks(cid, cause)
            relaxed.append(cid)
        return relaxed

    def _capacity_event(self, kind, request, report, blocking, step) -> ClaimEvent:
        fields = report.event_fields()
        return ClaimEvent(
            kind,
            request_id=request.request_id,
            step=step,
            blocking_claim_ids=list(blocking),
            protected_resident_blocks=fields["protected_resident_blocks"],
            active_live_blocks_required=fields["active_live_blocks_required"],
            resident_plus_active_blocks=fields["resident_plus_active_blocks"],
            usable_blocks=fields["usable_blocks"],
            capacity_shortfall_blocks=fields["capacity_shortfall_blocks"],
            feasibility=fields["feasibility"],
        )

    def _drop_live(self, request: ActiveRequest, complete: bool) -> None:
        if self.pool.request_blocks(request.request_id):
            self.pool.free_request(request.request_id, admit=False, complete=complete)
        request.live_blocks = 0
        request.next_chunk = 0
        request.trajectory.clear()

    def _defer(self, request, report, blocking, step) -> ChunkOutcome:
        self._drop_live(request, complete=False)
        request.deferrals += 1
        request.status = RequestStatus.DEFERRED
        event = self._capacity_event(tm.ACTIVE_DEFERRED, request, report, blocking, step)
        self.pool.sink.emit(event)
        return ChunkOutcome("deferred", event=event)

    def _refuse(self, request, report, blocking, step) -> ChunkOutcome:
        self._drop_live(request, complete=True)
        request.status = RequestStatus.REFUSED
        request.stop_reason = STOP_PROTECTED_REFUSED
        event = self._capacity_event(tm.ACTIVE_REFUSED, request, report, blocking, step)
        self.pool.sink.emit(event)
        self.pool.sink.emit(
            ClaimEvent(
                tm.REQUEST_STOPPED,
                request_id=request.request_id,
                step=step,
                extra={"stop_reason": STOP_PROTECTED_REFUSED},
            )
        )
        return ChunkOutcome("refused", event=event)


def arbitrate(
    request: ActiveRequest,
    policy: ConflictAction | str,
    pool: BlockPool,
    step: int | None = None,
    **arbiter_kwargs,
) -> ArbiterOutcome:
    """Drive one request through every chunk at a single step.

    Convenience wrapper over :class:`Arbiter` for probes that do not need
    the full step loop. A deferred request is retried until the defer budget
    turns it into a refusal.
    """
    arbiter = Arbiter(pool, policy, **arbiter_kwargs)
    step = pool.clock if step is None else step
    arbiter.prepare(request)
    evicted: list[int] = []
    refusal = None
    while not request.terminal:
        out = schedule_chunk(request, arbiter, step)
        evicted.extend(out.evicted_block_ids)
        if out.kind == "refused":
            refusal = out.event
        elif out.kind == "waiting":
            return ArbiterOutcome(request.status, tuple(evicted), None, tuple(request.trajectory))
        elif out.kind == "allocated" and request.chunks_remaining == 0:
            complete_request(request, pool, step)
    return ArbiterOutcome(request.status, tuple(evicted), refusal, tuple(request.trajectory))


def oracle_action(
    feasible_actions: Mapping[str, float], report: FeasibilityReport
) -> str | None:
    """Pick the cheapest action among those given explicit costs.

    Analysis helper only: with no infeasibility, ``"serve"`` costs nothing.
    """
    if report.feasible:
        return "serve"
    if not feasible_actions:
        return None
    return min(sorted(feasible_actions), key=lambda k: feasible_actions[k])
