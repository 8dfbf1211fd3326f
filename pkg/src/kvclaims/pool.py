"""Simulated paged KV block pool with claim-aware eviction.

Blocks are ``free``, ``cached_reusable`` (prefix state kept for future
reuse) or ``active_live`` (held by an in-flight request). Active
allocation takes free blocks first and then evicts cached blocks in LRU
order, skipping any block whose claim is excluded. Allocation is
all-or-nothing: a refused request evicts nothing.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable

from . import telemetry as tm
from .claims import CacheIdentity, ClaimRegistry, ClaimState, ProtectionMode
from .errors import (
    ClaimNotReleased,
    InsufficientFree,
    InvariantViolation,
    UnknownClaim,
    UnknownRequest,
)
from .materialization import DEFAULT_BLOCK_SIZE, evaluate, first_missing
from .telemetry import ClaimEvent, TraceSink


class Residency(str, Enum):
    FREE = "free"
    CACHED = "cached_reusable"
    ACTIVE = "active_live"


@dataclass
class Block:
    block_id: int
    residency: Residency = Residency.FREE
    owner_object: str | None = None
    prefix_position: int | None = None
    claim_tag: str | None = None
    inserted_step: int = 0
    touched_step: int = 0

    def clear(self) -> None:
        self.residency = Residency.FREE
        self.owner_object = None
        self.prefix_position = None
        self.claim_tag = None


@dataclass(frozen=True)
class PoolStats:
    usable_blocks: int
    free_blocks: int
    cached_reusable_blocks: int
    active_live_blocks: int
    protected_resident_blocks: int


@dataclass(frozen=True)
class AllocationOutcome:
    allocated: bool
    block_ids: tuple[int, ...] = ()
    evicted_block_ids: tuple[int, ...] = ()
    shortfall_blocks: int = 0
    blocking_claim_ids: tuple[str, ...] = ()


@dataclass
class _RequestBlocks:
    block_ids: list[int] = field(default_factory=list)


class BlockPool:
    def __init__(
        self,
        usable_blocks: int,
        block_size: int = DEFAULT_BLOCK_SIZE,
        sink: TraceSink | None = None,
        claims: ClaimRegistry | None = None,
        validate: bool = False,
    ):
        if usable_blocks <= 0:
            raise ValueError("usable_blocks must be positive")
        self.usable_blocks = usable_blocks
        self.block_size = block_size
        self.sink = sink if sink is not None else TraceSink()
        self.claims = claims if claims is not None else ClaimRegistry(self.sink)
        self.validate = validate
        self.clock = 0
        self.blocks = [Block(i) for i in range(usable_blocks)]
        self._free: deque[int] = deque(range(usable_blocks))
        self._protected: set[str] = set()
        self._identities: dict[str, CacheIdentity] = {}
        self._requests: dict[str, _RequestBlocks] = {}
        self._completed: set[str] = set()

    # -- queries -----------------------------------------------------------

    def stats(self) -> PoolStats:
        counts = {r: 0 for r in Residency}
        protected = 0
        for b in self.blocks:
            counts[b.residency] += 1
            if b.residency is Residency.CACHED and b.claim_tag in self._protected:
                protected += 1
        return PoolStats(
            usable_blocks=self.usable_blocks,
            free_blocks=counts[Residency.FREE],
            cached_reusable_blocks=counts[Residency.CACHED],
            active_live_blocks=counts[Residency.ACTIVE],
            protected_resident_blocks=protected,
        )

    @property
    def free_blocks(self) -> int:
        return len(self._free)

    def blocks_of(self, owner_object: str) -> list[Block]:
        return [
            b
            for b in self.blocks
            if b.residency is Residency.CACHED and b.owner_object == owner_object
        ]

    def cached_positions(self, owner_object: str) -> list[int]:
        return sorted(b.prefix_position for b in self.blocks_of(owner_object))

    def claim_blocks(self, claim_id: str) -> list[Block]:
        return [b for b in self.blocks if b.residency is Residency.CACHED and b.claim_tag == claim_id]

    def identity_of(self, owner_object: str) -> CacheIdentity | None:
        return self._identities.get(owner_object)

    def lookup_leading(self, owner_object: str, identity: CacheIdentity | None = None) -> int:
        """Leading blocks reusable by a query under ``identity``."""
        stored = self._identities.get(owner_object, CacheIdentity(block_size_tokens=self.block_size))
        if identity is not None and not stored.compatible(identity):
            return 0
        return first_missing(self.cached_positions(owner_object))

    def request_blocks(self, request_id: str) -> list[int]:
        rec = self._requests.get(request_id)
        return list(rec.block_ids) if rec else []

    def protected_claims(self) -> set[str]:
        return set(self._protected)

    # -- mutations ---------------------------------------------------------

    def cache_resident(
        self,
        object_id: str,
        block_count: int,
        claim_tag: str | None = None,
        identity: CacheIdentity | None = None,
    ) -> list[int]:
        if block_count < 0:
            raise ValueError("block_count must be non-negative")
        if block_count > len(self._free):
            raise InsufficientFree(f"{block_count} requested, {len(self._free)} free")
        if block_count == 0:
            return []
        if identity is not None:
            self._identities[object_id] = identity
        ids = [self._free.popleft() for _ in range(block_count)]
        kept = self._adopt(object_id, ids, claim_tag)
        self._emit(
            tm.RESIDENT_CACHED,
            claim_id=claim_tag,
            object_id=object_id,
            blocks=len(kept),
        )
        self._check()
        return kept

    def touch_protect(self, claim_id: str) -> int:
        claim = self.claims.get(claim_id)
        if not claim.live:
            raise UnknownClaim(f"{claim_id} is {claim.state.value}, not accepted or materialized")
        if claim_id in self._protected:
            return 0
        self._protected.add(claim_id)
        blocks = self.claim_blocks(claim_id)
        for b in blocks:
            b.touched_step = self.clock
        return len(blocks)

    def release_blocks(self, claim_id: str, cause: str) -> int:
        if cause not in ("demotion", "expiry"):
            raise ValueError(f"unknown release cause {cause!r}")
        claim = self.claims.get(claim_id)
        if not claim.released:
            raise ClaimNotReleased(f"{claim_id} is still {claim.state.value}")
        self._protected.discard(claim_id)
        return len(self.claim_blocks(claim_id))

    def eviction_candidates(self, exclusion: Iterable[str] = ()) -> list[Block]:
        excluded = self._protected | set(exclusion)
        cands = [
            b
            for b in self.blocks
            if b.residency is Residency.CACHED and (b.claim_tag is None or b.claim_tag not in excluded)
        ]
        return sorted(cands, key=self.victim_key)

    def victim_key(self, block: Block) -> tuple[int, int, int, int]:
        # Soft-priority claims sit in a higher bucket: evicted last, never excluded.
        bucket = 0
        if block.claim_tag is not None and block.claim_tag in self.claims:
            claim = self.claims.get(block.claim_tag)
            if claim.live and claim.mode is ProtectionMode.SOFT_PRIORITY:
                bucket = 1
        return (bucket, block.inserted_step, block.touched_step, block.block_id)

    def allocate_active(
        self,
        request_id: str,
        block_count: int,
        exclusion: Iterable[str] = (),
        context: dict[str, Any] | None = None,
    ) -> AllocationOutcome:
        """Allocate ``block_count`` live blocks to ``request_id``.

        ``context`` is attached to any ``claim_harmed`` event this
        allocation causes.
        """
        if request_id in self._completed:
            raise UnknownRequest(f"{request_id} already completed")
        if block_count < 0:
            raise ValueError("block_count must be non-negative")
        exclusion = set(exclusion)
        need = max(0, block_count - len(self._free))
        cands = self.eviction_candidates(exclusion)
        if need > len(cands):
            return AllocationOutcome(
                allocated=False,
                shortfall_blocks=need - len(cands),
                blocking_claim_ids=tuple(self.blocking_claims(exclusion)),
            )
        victims = cands[:need]
        for b in victims:
            self._evict(b, request_id, context or {})
        rec = self._requests.setdefault(request_id, _RequestBlocks())
        ids = []
        for _ in range(block_count):
            b = self.blocks[self._free.popleft()]
            b.residency = Residency.ACTIVE
            b.owner_object = request_id
            b.prefix_position = len(rec.block_ids)
            b.inserted_step = b.touched_step = self.clock
            rec.block_ids.append(b.block_id)
            ids.append(b.block_id)
        self._check()
        return AllocationOutcome(
            allocated=True,
            block_ids=tuple(ids),
            evicted_block_ids=tuple(b.block_id for b in victims),
        )

    def reclaim(self, block_count: int, exclusion: Iterable[str] = ()) -> bool:
        """Evict LRU candidates until ``block_count`` blocks are free.

        All-or-nothing, like :meth:`allocate_active`.
        """
        need = max(0, block_count - len(self._free))
        cands = self.eviction_candidates(exclusion)
        if need > len(cands):
            return False
        for b in cands[:need]:
            self._evict(b, None, {})
        self._check()
        return True

    def free_request(
        self,
        request_id: str,
        admit: bool = False,
        object_id: str | None = None,
        complete: bool = True,
    ) -> int:
        """Return a request's live blocks.

        Admitted blocks become cached prefix state of ``object_id`` (the
        request id by default); otherwise they go back to the free queue.
        ``complete=False`` drops the blocks but lets the request allocate
        again later, as a deferred request does.
        """
        if request_id in self._completed or request_id not in self._requests:
            raise UnknownRequest(request_id)
        rec = self._requests.pop(request_id)
        count = len(rec.block_ids)
        if complete:
            self._completed.add(request_id)
        if admit and count:
            obj = object_id or request_id
            kept = self._adopt(obj, rec.block_ids, None)
            self._emit(tm.RESIDENT_CACHED, request_id=request_id, object_id=obj, blocks=len(kept))
        else:
            for bid in rec.block_ids:
                self.blocks[bid].clear()
                self._free.append(bid)
        self._check()
        return count

    # -- internals ---------------------------------------------------------

    def _adopt(self, object_id: str, block_ids: list[int], claim_tag: str | None) -> list[int]:
        """Make ``block_ids`` the cached positions ``0..n-1`` of ``object_id``.

        Positions already cached for the object keep their existing block,
        which picks up ``claim_tag`` if it had none; the duplicate is
        returned to the free queue.
        """
        present = {b.prefix_position: b for b in self.blocks_of(object_id)}
        kept = []
        for pos, bid in enumerate(block_ids):
            b = self.blocks[bid]
            if pos in present:
                b.clear()
                self._free.append(bid)
                old = present[pos]
                if claim_tag is not None and old.claim_tag is None:
                    old.claim_tag = claim_tag
                    old.touched_step = self.clock
                continue
            b.residency = Residency.CACHED
            b.owner_object = object_id
            b.prefix_position = pos
            b.claim_tag = claim_tag
            b.inserted_step = b.touched_step = self.clock
            kept.append(bid)
        return kept

    def blocking_claims(self, exclusion: Iterable[str] = ()) -> list[str]:
        """Excluded claims that still hold cached blocks, in acceptance order."""
        held = {b.claim_tag for b in self.blocks if b.residency is Residency.CACHED and b.claim_tag}
        blocking = (self._protected | set(exclusion)) & held
        order = {c.claim_id: c.accept_order for c in self.claims}
        return sorted(blocking, key=lambda cid: (order.get(cid, 1 << 30), cid))

    def _evict(self, block: Block, request_id: str | None, context: dict[str, Any]) -> None:
        tag = block.claim_tag
        owner = block.owner_object
        position = block.prefix_position
        claim = self.claims.get(tag) if tag is not None and tag in self.claims else None
        block.clear()
        self._free.append(block.block_id)
        kind = tm.BLOCK_LOSS_AFTER_RELEASE if claim is not None and claim.released else tm.BLOCK_EVICTED
        self._emit(
            kind,
            claim_id=tag,
            request_id=request_id,
            object_id=owner,
            block_id=block.block_id,
            prefix_position=position,
        )
        if claim is None or not claim.carries_obligation:
            return
        pred = claim.spec.materialization_predicate
        survivors = [p for p in self.cached_positions(owner) if p < pred.span_total_blocks]
        result = evaluate(pred, survivors, self.block_size)
        if not result.satisfied:
            details = {
                **context,
                "request_id": request_id,
                "leading_blocks": result.leading_blocks,
                "required_leading_blocks": pred.required_leading_blocks,
                "satisfied": False,
            }
            self.claims.transition(tag, ClaimState.HARMED, self.clock, **details)
            self._protected.discard(tag)

    def _emit(self, kind: str, **fields: Any) -> None:
        named = {k: fields.pop(k) for k in ("claim_id", "request_id") if k in fields}
        self.sink.emit(ClaimEvent(kind, step=self.clock, **named, extra=fields))

    def _check(self) -> None:
        if not self.validate:
            return
        s = self.stats()
        if s.free_blocks + s.cached_reusable_blocks + s.active_live_blocks != s.usable_blocks:
            raise InvariantViolation(f"conservation broken: {s}")
        if s.free_blocks != len(self._free) or len(set(self._free)) != len(self._free):
            raise InvariantViolation("free queue out of sync with block residency")
        if s.protected_resident_blocks > s.cached_reusable_blocks:
            raise InvariantViolation("protected exceeds cached")
        seen: set[tuple[str, int]] = set()
        for b in self.blocks:
            if b.residency is Residency.CACHED:
                key = (b.owner_object, b.prefix_position)
                if key in seen:
                    raise InvariantViolation(f"duplicate prefix position {key}")
                seen.add(key)
