"""Builders shared across test modules."""
from __future__ import annotations

from kvclaims.claims import ClaimRegistry, ProtectionMode, ResidentClaimInput
from kvclaims.materialization import MaterializationPredicate
from kvclaims.pool import BlockPool
from kvclaims.telemetry import TraceSink


def claim_input(
    claim_id: str = "claim:resident",
    object_id: str = "resident",
    blocks: int = 60,
    mode: ProtectionMode = ProtectionMode.HARD_PROTECTED,
    required: int | None = None,
    duration: int | None = None,
) -> ResidentClaimInput:
    return ResidentClaimInput(
        claim_id=claim_id,
        owner_scope="tests",
        object_id=object_id,
        materialization_predicate=MaterializationPredicate(required or blocks, blocks),
        footprint_blocks=blocks,
        protection_mode=mode,
        duration_steps=duration,
    )


def probe_pool(protect: bool, usable: int = 80, resident: int = 60, validate: bool = True) -> BlockPool:
    """Pool holding one accepted, cached 60-block resident claim."""
    sink = TraceSink()
    registry = ClaimRegistry(sink)
    pool = BlockPool(usable, sink=sink, claims=registry, validate=validate)
    registry.submit_claim(claim_input(blocks=resident), usable, 0)
    pool.cache_resident("resident", resident, "claim:resident")
    if protect:
        pool.touch_protect("claim:resident")
    return pool
