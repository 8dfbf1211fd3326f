"""Canonical scenarios and the conformance fixture set generated from them.

Traces are produced by running the simulator, never written by hand. The
one exception is the live scheduler-pressure trace, an external
observation kept as a read-only fixture for the trace reader and L7.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from os import PathLike
from pathlib import Path
from typing import Any

from .arbiter import ConflictAction
from .claims import CacheIdentity, ProtectionMode
from .conformance import FIXTURE_FILES, LIVE_SCHEDULER_FILE, MATERIALIZATION_PROFILES_FILE
from .materialization import (
    DEFAULT_BLOCK_SIZE,
    MaterializationPredicate,
    evaluate_profile,
    leading_profile,
    thresholded_value,
)
from .pool import BlockPool
from .runtime import ClaimDecl, MicroRuntime, RequestDecl, ScenarioConfig, run_scenario

RESIDENT = 60
ACTIVE = 70
USABLE = 80

CHUNKS = (20, 20, 20, 10)

# Three compact spans; thresholds are the full span.
PROFILE_SPANS = {
    "A": MaterializationPredicate(40, 40, 9.0),
    "B": MaterializationPredicate(40, 40, 9.0),
    "C": MaterializationPredicate(20, 20, 3.0),
}
# Recorded first-missing blocks per retention policy (A / B / C).
RECORDED_LEADING = {
    "native": (0, 0, 0),
    "naive_fair_share": (30, 20, 19),
    "complete_prefix_fair_share": (40, 40, 0),
    "value_density": (40, 40, 0),
}

SCENARIOS = ("native", "no_admit", "hard_claim", "demotion", "expiry", "chunked", "predicate_failure")


def _resident(**kw: Any) -> ClaimDecl:
    return ClaimDecl("claim:resident", "resident", RESIDENT, **kw)


def canonical_config(kind: str) -> ScenarioConfig:
    """60-block resident, 70-block active request, 80 usable blocks, by variant."""
    bulky = RequestDecl("active", (ACTIVE,), arrival_step=1)
    if kind == "native":
        return ScenarioConfig(USABLE, (_resident(),), (bulky,), ConflictAction.NATIVE_EVICTION, name=kind)
    if kind == "no_admit":
        return ScenarioConfig(USABLE, (_resident(),), (bulky,), ConflictAction.WRITE_NO_ADMIT_ONLY, name=kind)
    if kind == "hard_claim":
        return ScenarioConfig(
            USABLE, (_resident(),), (bulky,), ConflictAction.RESIDENT_VICTIM_EXCLUSION, name=kind
        )
    if kind == "demotion":
        return ScenarioConfig(USABLE, (_resident(),), (bulky,), ConflictAction.RELAX_DEMOTE, name=kind)
    if kind == "expiry":
        # The claim's duration runs out at the step the bulky request arrives.
        return ScenarioConfig(
            USABLE,
            (_resident(protection_mode=ProtectionMode.EXPIRING, duration_steps=1),),
            (bulky,),
            ConflictAction.RESIDENT_VICTIM_EXCLUSION,
            name=kind,
        )
    if kind == "chunked":
        return ScenarioConfig(
            USABLE, (), (RequestDecl("chunked", CHUNKS, arrival_step=0),), ConflictAction.NATIVE_EVICTION, name=kind
        )
    if kind == "predicate_failure":
        # One spare block; a two-block request must take the oldest resident block.
        return ScenarioConfig(
            RESIDENT + 1,
            (_resident(),),
            (RequestDecl("probe", (2,), write_admit=False, arrival_step=1),),
            ConflictAction.NATIVE_EVICTION,
            name=kind,
        )
    raise ValueError(f"unknown canonical scenario {kind!r}")


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def predicate_fixture() -> dict[str, Any]:
    runtime = MicroRuntime(canonical_config("predicate_failure"))
    runtime.run()
    return {
        "predicate": asdict(_resident().predicate),
        "survived_positions": runtime.pool.cached_positions("resident"),
        "block_size": DEFAULT_BLOCK_SIZE,
    }


def _salted_leading() -> tuple[int, ...]:
    """Store every span under a salted namespace and query it unsalted."""
    total = sum(p.span_total_blocks for p in PROFILE_SPANS.values())
    pool = BlockPool(total)
    salted = CacheIdentity(namespace_salt="tenant-salt")
    for name, p in PROFILE_SPANS.items():
        pool.cache_resident(name, p.span_total_blocks, None, salted)
    return tuple(pool.lookup_leading(name, salted.unsalted()) for name in PROFILE_SPANS)


def materialization_profiles() -> dict[str, Any]:
    names = list(PROFILE_SPANS)
    rows = dict(RECORDED_LEADING)
    rows["salted"] = _salted_leading()
    profiles = {}
    for policy, leading in rows.items():
        results = evaluate_profile(PROFILE_SPANS, leading_profile(leading, names))
        profiles[policy] = {
            "first_missing_blocks": list(leading),
            "cached_tokens": [results[n].cached_tokens for n in names],
            "satisfied": [results[n].satisfied for n in names],
            "thresholded_value": thresholded_value(results.values()),
        }
    return {
        "block_size": DEFAULT_BLOCK_SIZE,
        "spans": {n: asdict(p) for n, p in PROFILE_SPANS.items()},
        "profiles": profiles,
    }


def live_scheduler_events() -> list[dict[str, Any]]:
    """Observed scheduler-path pressure run, transcribed as-is.

    Its capacity proof (40 + 46 = 86 > 68, shortfall 19) is off by one
    block; the reconstruction reports that as a warning.
    """
    cid, rid = "claim:live-resident", "live-active"
    proof = {
        "protected_resident_blocks": 40,
        "active_live_blocks_required": 46,
        "resident_plus_active_blocks": 86,
        "usable_blocks": 68,
        "capacity_shortfall_blocks": 19,
        "feasibility": "infeasible_preserve_resident_and_active",
    }
    events: list[dict[str, Any]] = [
        {"event": "claim_submitted", "claim_id": cid, "step": 0},
        {"event": "claim_accepted", "claim_id": cid, "step": 0},
    ]
    events += [
        {"event": "claim_materialized", "claim_id": cid, "step": 0, "block_position": i} for i in range(40)
    ]
    events.append({"event": "active_deferred", "request_id": rid, "step": 1, "blocking_claim_ids": [cid], **proof})
    events.append(
        {"event": "active_request_refused", "request_id": rid, "step": 2, "blocking_claim_ids": [cid], **proof}
    )
    events.append(
        {
            "event": "request_stopped",
            "request_id": rid,
            "step": 2,
            "stop_reason": "protected_resident_capacity_refused",
        }
    )
    return events


TRACE_SCENARIOS = {
    "L1": "native",
    "L2": "no_admit",
    "L3": "hard_claim",
    "L4": "demotion",
    "L5": "expiry",
}


def generate_canonical_fixtures(output_dir: str | PathLike) -> list[Path]:
    """Write the canonical fixture set; repeated calls are byte-identical."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for check, kind in TRACE_SCENARIOS.items():
        path = out / FIXTURE_FILES[check]
        run_scenario(canonical_config(kind), trace_path=path)
        written.append(path)

    docs = {
        FIXTURE_FILES["L6"]: predicate_fixture(),
        FIXTURE_FILES["C1"]: {"backend_name": "soft-priority-only", "supported": ["soft_priority"]},
        MATERIALIZATION_PROFILES_FILE: materialization_profiles(),
    }
    for name, doc in docs.items():
        path = out / name
        path.write_text(_dump(doc), encoding="utf-8")
        written.append(path)

    path = out / LIVE_SCHEDULER_FILE
    path.write_text("".join(json.dumps(e) + "\n" for e in live_scheduler_events()), encoding="utf-8")
    written.append(path)
    return written
