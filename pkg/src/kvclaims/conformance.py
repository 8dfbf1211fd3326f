"""Trace conformance checks L1-L7, the C1 capability classification, and replay.

Every check consumes only its own fixture and returns a
:class:`CheckVerdict` whose evidence is enough to re-derive the verdict.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from os import PathLike
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from . import telemetry as tm
from .claims import EXCLUDING_MODES, ClaimState, ProtectionMode, is_legal
from .errors import MissingFixture
from .materialization import MaterializationPredicate, evaluate
from .telemetry import ClaimEvent, read_trace

Trace = Sequence[ClaimEvent]

_EXCLUDING = {m.value for m in EXCLUDING_MODES}


@dataclass
class CheckVerdict:
    check_id: str
    passed: bool
    evidence: dict[str, Any] = field(default_factory=dict)
    message: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "check_id": self.check_id,
            "passed": self.passed,
            "evidence": self.evidence,
            "message": self.message,
        }


def _count(trace: Trace, kind: str, claim_id: str | None = None) -> int:
    return sum(1 for e in trace if e.event == kind and (claim_id is None or e.claim_id == claim_id))


def _accepted_modes(trace: Trace) -> dict[str, str | None]:
    return {e.claim_id: e.get("protection_mode") for e in trace if e.event == tm.CLAIM_ACCEPTED}


# -- L1 --------------------------------------------------------------------


def check_L1(trace: Trace) -> CheckVerdict:
    accepted: set[str] = set()
    orphans = []
    for i, e in enumerate(trace):
        if e.event == tm.CLAIM_ACCEPTED:
            accepted.add(e.claim_id)
        elif e.event == tm.CLAIM_HARMED and e.claim_id not in accepted:
            orphans.append({"index": i, "claim_id": e.claim_id})
    evidence = {
        "victims": _count(trace, tm.BLOCK_EVICTED),
        "accepted": _count(trace, tm.CLAIM_ACCEPTED),
        "harmed": _count(trace, tm.CLAIM_HARMED),
        "harm_without_acceptance": orphans,
    }
    if orphans:
        return CheckVerdict("L1", False, evidence, f"{len(orphans)} claim_harmed without prior claim_accepted")
    return CheckVerdict("L1", True, evidence, "every claim_harmed follows claim_accepted")


# -- L2 --------------------------------------------------------------------


def check_L2(trace: Trace) -> CheckVerdict:
    denied = [e for e in trace if e.event == tm.WRITE_ADMISSION_DENIED]
    if not denied:
        return CheckVerdict(
            "L2",
            False,
            {"served": False, "denied": False, "victims": 0},
            "not applicable: trace has no write no-admit request",
        )
    rid = denied[0].request_id
    served = any(e.event == tm.REQUEST_SERVED and e.request_id == rid for e in trace)
    victims = sum(1 for e in trace if e.event == tm.BLOCK_EVICTED and e.request_id == rid)
    evidence = {"request_id": rid, "served": served, "denied": True, "victims": victims}
    if not served:
        return CheckVerdict("L2", False, evidence, f"no-admit request {rid} was never served")
    if victims == 0:
        return CheckVerdict(
            "L2", False, evidence, "no resident victims: trace does not separate admission from allocation"
        )
    return CheckVerdict(
        "L2", True, evidence, f"served without reusable admission and still evicted {victims} resident blocks"
    )


# -- L3 --------------------------------------------------------------------


def _capacity_problems(e: ClaimEvent) -> list[str]:
    problems = []
    missing = [f for f in tm.CAPACITY_FIELDS if getattr(e, f) is None]
    if missing:
        return [f"missing capacity fields {missing}"]
    if e.resident_plus_active_blocks != e.protected_resident_blocks + e.active_live_blocks_required:
        problems.append("resident_plus_active != protected + active")
    expected = max(0, e.resident_plus_active_blocks - e.usable_blocks)
    if e.capacity_shortfall_blocks != expected:
        problems.append(f"shortfall {e.capacity_shortfall_blocks} != {expected}")
    return problems


def check_L3(trace: Trace) -> CheckVerdict:
    modes = _accepted_modes(trace)
    materialized = {e.claim_id for e in trace if e.event == tm.CLAIM_MATERIALIZED}
    released: set[str] = set()
    harmed: set[str] = set()
    problems: list[str] = []
    refusals = []
    silent_loss: dict[str, int] = {}
    for e in trace:
        if e.event in (tm.CLAIM_DEMOTED, tm.CLAIM_EXPIRED):
            released.add(e.claim_id)
        elif e.event == tm.CLAIM_HARMED:
            harmed.add(e.claim_id)
        elif e.event == tm.BLOCK_EVICTED and e.claim_id in modes and e.claim_id not in released:
            if modes[e.claim_id] in _EXCLUDING:
                silent_loss[e.claim_id] = silent_loss.get(e.claim_id, 0) + 1
        elif e.event == tm.ACTIVE_REFUSED:
            refusals.append(e)
            blocking = e.blocking_claim_ids or []
            if not blocking:
                problems.append(f"refusal of {e.request_id} has no blocking_claim_ids")
            problems.extend(f"refusal of {e.request_id}: {p}" for p in _capacity_problems(e))
            if e.capacity_shortfall_blocks is not None and e.capacity_shortfall_blocks <= 0:
                problems.append(f"refusal of {e.request_id} without an infeasible capacity proof")
            for cid in blocking:
                if cid not in modes:
                    problems.append(f"blocking claim {cid} was never accepted")
                elif cid in released or cid in harmed:
                    problems.append(f"blocking claim {cid} was already released or harmed")
    for cid, n in silent_loss.items():
        if cid not in harmed:
            problems.append(f"hard claim {cid} lost {n} blocks without release or harm telemetry")

    if not refusals:
        evidence = {"refusals": 0, "protected_claims": sorted(c for c, m in modes.items() if m in _EXCLUDING)}
        if problems:
            return CheckVerdict("L3", False, evidence, "; ".join(problems))
        return CheckVerdict("L3", True, evidence, "no infeasible pressure on accepted hard claims")

    first = refusals[0]
    blocking = list(first.blocking_claim_ids or [])
    evidence = {
        "refusals": len(refusals),
        "request_id": first.request_id,
        "protected_resident": first.protected_resident_blocks,
        "active_required": first.active_live_blocks_required,
        "resident_plus_active": first.resident_plus_active_blocks,
        "usable": first.usable_blocks,
        "shortfall": first.capacity_shortfall_blocks,
        "blocking": blocking,
        "blocking_accepted": all(c in modes for c in blocking),
        "blocking_materialized": all(c in materialized for c in blocking),
    }
    if problems:
        return CheckVerdict("L3", False, evidence, "; ".join(problems))
    return CheckVerdict(
        "L3",
        True,
        evidence,
        f"active refusal attributed to {', '.join(blocking)} with capacity proof "
        f"{evidence['resident_plus_active']} > {evidence['usable']}",
    )


# -- L4 / L5 ---------------------------------------------------------------


def check_L4_L5(trace: Trace, mode: str = "demotion") -> CheckVerdict:
    if mode not in ("demotion", "expiry"):
        raise ValueError("mode must be 'demotion' or 'expiry'")
    check_id = "L4" if mode == "demotion" else "L5"
    release_kind = tm.CLAIM_DEMOTED if mode == "demotion" else tm.CLAIM_EXPIRED
    release_at: dict[str, int] = {}
    any_release: set[str] = set()
    problems = []
    losses = 0
    for i, e in enumerate(trace):
        if e.event in (tm.CLAIM_DEMOTED, tm.CLAIM_EXPIRED):
            any_release.add(e.claim_id)
            if e.event == release_kind:
                release_at.setdefault(e.claim_id, i)
        elif e.event == tm.BLOCK_LOSS_AFTER_RELEASE:
            if e.claim_id not in any_release:
                problems.append(f"block loss for {e.claim_id} at event {i} precedes its release")
            if e.claim_id in release_at:
                losses += 1
    if not release_at:
        return CheckVerdict(
            check_id,
            False,
            {"release_step": None, "losses": 0, "harmed": 0},
            f"not applicable: trace has no {release_kind} event",
        )
    harmed = sum(_count(trace, tm.CLAIM_HARMED, cid) for cid in release_at)
    if harmed:
        problems.append(f"{harmed} claim_harmed events for released claims")
    first = min(release_at.values())
    evidence = {
        "claims": sorted(release_at),
        "release_step": trace[first].step,
        "losses": losses,
        "harmed": harmed,
    }
    if problems:
        return CheckVerdict(check_id, False, evidence, "; ".join(problems))
    return CheckVerdict(
        check_id, True, evidence, f"{release_kind} precedes all {losses} post-release losses, no harm"
    )


def check_L4(trace: Trace) -> CheckVerdict:
    return check_L4_L5(trace, "demotion")


def check_L5(trace: Trace) -> CheckVerdict:
    return check_L4_L5(trace, "expiry")


# -- L6 --------------------------------------------------------------------


def check_L6(fixture: Mapping[str, Any]) -> CheckVerdict:
    pred = MaterializationPredicate(**fixture["predicate"])
    result = evaluate(pred, fixture["survived_positions"], fixture.get("block_size", 16))
    evidence = {
        "surviving": result.surviving_blocks,
        "leading": result.leading_blocks,
        "required": pred.required_leading_blocks,
        "satisfied": result.satisfied,
    }
    if result.satisfied:
        return CheckVerdict("L6", False, evidence, "not triggered: predicate satisfied")
    if result.surviving_blocks == 0:
        return CheckVerdict("L6", False, evidence, "not triggered: nothing survived")
    return CheckVerdict(
        "L6",
        True,
        evidence,
        f"{result.surviving_blocks} surviving blocks fail a {pred.required_leading_blocks}-block "
        f"leading-prefix predicate",
    )


# -- L7 --------------------------------------------------------------------


@dataclass
class Reconstruction:
    claims: dict[str, str] = field(default_factory=dict)
    requests: dict[str, str] = field(default_factory=dict)
    blocking: dict[str, list[str]] = field(default_factory=dict)
    stop_reasons: dict[str, str] = field(default_factory=dict)
    conditional: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict[str, Any]:
        return {
            "claims": self.claims,
            "requests": self.requests,
            "blocking": self.blocking,
            "stop_reasons": self.stop_reasons,
            "conditional": self.conditional,
            "errors": self.errors,
            "warnings": self.warnings,
        }


_CLAIM_TARGETS = {
    tm.CLAIM_ACCEPTED: ClaimState.ACCEPTED,
    tm.CLAIM_REJECTED: ClaimState.REFUSED,
    tm.CLAIM_MATERIALIZED: ClaimState.MATERIALIZED,
    tm.CLAIM_DEMOTED: ClaimState.DEMOTED,
    tm.CLAIM_EXPIRED: ClaimState.EXPIRED,
    tm.CLAIM_HARMED: ClaimState.HARMED,
}
_REQUEST_OUTCOMES = {
    tm.REQUEST_SERVED: "served",
    tm.ACTIVE_REFUSED: "refused",
}


def reconstruct(trace: Trace) -> Reconstruction:
    """Replay a trace through the claim lifecycle and request outcomes."""
    rec = Reconstruction()
    states: dict[str, ClaimState] = {}
    for i, e in enumerate(trace):
        kind, cid = e.event, e.claim_id
        if kind == tm.CLAIM_SUBMITTED:
            if cid in states:
                rec.errors.append(f"event {i}: {cid} submitted twice")
            states[cid] = ClaimState.SUBMITTED
        elif kind == "claim_conditionally_accepted":
            states.setdefault(cid, ClaimState.SUBMITTED)
            rec.conditional.append(cid)
        elif kind in _CLAIM_TARGETS:
            target = _CLAIM_TARGETS[kind]
            source = states.get(cid)
            if source is None:
                if target is ClaimState.ACCEPTED:
                    source = ClaimState.SUBMITTED  # externally recorded traces may omit submission
                else:
                    rec.errors.append(f"event {i}: {kind} for unknown claim {cid}")
                    continue
            if source is ClaimState.MATERIALIZED and target is ClaimState.MATERIALIZED:
                continue  # per-block materialization records
            if not is_legal(source, target):
                rec.errors.append(f"event {i}: illegal transition {cid}: {source.value} -> {target.value}")
                continue
            states[cid] = target
        elif kind == tm.BLOCK_LOSS_AFTER_RELEASE:
            if states.get(cid) not in (ClaimState.DEMOTED, ClaimState.EXPIRED):
                rec.errors.append(f"event {i}: block loss for {cid} before its release")
        elif kind in (tm.ACTIVE_REFUSED, tm.ACTIVE_DEFERRED):
            rid = e.request_id
            blocking = list(e.blocking_claim_ids or [])
            if kind == tm.ACTIVE_REFUSED and not blocking:
                rec.errors.append(f"event {i}: refusal of {rid} has no blocking claims")
            for b in blocking:
                if states.get(b) not in (ClaimState.ACCEPTED, ClaimState.MATERIALIZED):
                    state = states.get(b)
                    rec.errors.append(
                        f"event {i}: {rid} attributed to {b} in state {state.value if state else 'unknown'}"
                    )
            if e.has_capacity():
                rec.warnings.extend(f"event {i} ({kind} {rid}): {p}" for p in _capacity_problems(e))
            rec.blocking[rid] = blocking
            if kind == tm.ACTIVE_DEFERRED:
                if rec.requests.get(rid) in ("served", "refused"):
                    rec.errors.append(f"event {i}: {rid} deferred after terminal outcome")
                rec.requests[rid] = "deferred"
                continue
        if kind in _REQUEST_OUTCOMES:
            rid = e.request_id
            prev = rec.requests.get(rid)
            if prev in ("served", "refused"):
                rec.errors.append(f"event {i}: {rid} has conflicting outcomes {prev} and {_REQUEST_OUTCOMES[kind]}")
            rec.requests[rid] = _REQUEST_OUTCOMES[kind]
        elif kind == tm.REQUEST_STOPPED:
            rec.stop_reasons[e.request_id] = e.get("stop_reason", "")
            rec.requests.setdefault(e.request_id, "stopped")
    rec.claims = {cid: s.value for cid, s in states.items()}
    return rec


def check_L7(trace: Trace) -> CheckVerdict:
    rec = reconstruct(trace)
    evidence = rec.to_dict()
    if not rec.ok:
        return CheckVerdict("L7", False, evidence, rec.errors[0])
    parts = [f"{c}={s}" for c, s in rec.claims.items()] + [f"{r}={o}" for r, o in rec.requests.items()]
    msg = "reconstructed " + (", ".join(parts) if parts else "an empty lifecycle")
    if rec.warnings:
        msg += f" ({len(rec.warnings)} warning(s))"
    return CheckVerdict("L7", True, evidence, msg)


# -- C1 --------------------------------------------------------------------


class ConformanceClass(str, Enum):
    UNSOUND = "unsound"
    ADAPTER_REQUIRED = "adapter_required"
    APPROXIMATE = "approximate"
    NATIVE = "native"

    @property
    def rank(self) -> int:
        return list(ConformanceClass).index(self)


PRIMITIVES = frozenset(
    {
        "soft_priority",
        "ttl_duration",
        "pin_exclusion",
        "offload_tier",
        "no_evict_active",
        "claim_lifecycle_events",
        "refusal_attribution",
    }
)


@dataclass(frozen=True)
class CapabilityProfile:
    backend_name: str
    supported: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "supported", frozenset(self.supported))
        unknown = self.supported - PRIMITIVES
        if unknown:
            raise ValueError(f"unknown primitives {sorted(unknown)}")


@dataclass(frozen=True)
class Obligation:
    name: str
    native: frozenset[str]
    # None: no adapter can discharge it; empty set: an adapter always can.
    adapter: frozenset[str] | None


def _ob(name: str, native: Iterable[str], adapter: Iterable[str] | None) -> Obligation:
    return Obligation(name, frozenset(native), None if adapter is None else frozenset(adapter))


PRESERVE = _ob("preserve_until_release", {"pin_exclusion"}, None)
LIFECYCLE = _ob("lifecycle_telemetry", {"claim_lifecycle_events"}, ())
ATTRIBUTION = _ob("refusal_attribution", {"refusal_attribution"}, ())
EXPIRY = _ob("expiry_clock", {"ttl_duration"}, ())
RESTORABLE = _ob("restorable_or_resident", {"offload_tier", "pin_exclusion"}, None)
ORDERING = _ob("eviction_ordering", {"soft_priority"}, {"pin_exclusion"})

MODE_OBLIGATIONS: dict[ProtectionMode, tuple[Obligation, ...]] = {
    ProtectionMode.HARD_PROTECTED: (PRESERVE, LIFECYCLE, ATTRIBUTION),
    ProtectionMode.DEMOTABLE: (PRESERVE, LIFECYCLE),
    ProtectionMode.EXPIRING: (PRESERVE, EXPIRY, LIFECYCLE),
    ProtectionMode.OFFLOADABLE: (RESTORABLE, LIFECYCLE),
    ProtectionMode.SOFT_PRIORITY: (ORDERING,),
    ProtectionMode.BEST_EFFORT: (LIFECYCLE,),
}
# Soft priority only ranks victims, so no profile lowers it better than approximately.
MODE_CEILING = {ProtectionMode.SOFT_PRIORITY: ConformanceClass.APPROXIMATE}


def _discharge(ob: Obligation, supported: frozenset[str]) -> ConformanceClass:
    if ob.native & supported:
        return ConformanceClass.NATIVE
    if ob.adapter is not None and (not ob.adapter or ob.adapter & supported):
        return ConformanceClass.ADAPTER_REQUIRED
    return ConformanceClass.UNSOUND


def classify_capability(profile: CapabilityProfile, required_mode: ProtectionMode | str) -> ConformanceClass:
    """Classify lowering ``required_mode`` onto the backend's primitives.

    A lowering is sound only if every obligation of the mode is enforced or
    observable. The class is the weakest obligation's class, capped by the
    mode's ceiling.
    """
    mode = ProtectionMode(required_mode)
    worst = ConformanceClass.NATIVE
    for ob in MODE_OBLIGATIONS[mode]:
        got = _discharge(ob, profile.supported)
        if got.rank < worst.rank:
            worst = got
    ceiling = MODE_CEILING.get(mode, ConformanceClass.NATIVE)
    return worst if worst.rank <= ceiling.rank else ceiling


def classification_table(profiles: Iterable[CapabilityProfile]) -> dict[str, dict[str, str]]:
    return {
        p.backend_name: {m.value: classify_capability(p, m).value for m in ProtectionMode} for p in profiles
    }


def check_C1(profile: CapabilityProfile) -> CheckVerdict:
    hard = classify_capability(profile, ProtectionMode.HARD_PROTECTED)
    soft = classify_capability(profile, ProtectionMode.SOFT_PRIORITY)
    evidence = {
        "backend_name": profile.backend_name,
        "supported": sorted(profile.supported),
        "hard_protected": hard.value,
        "soft_priority": soft.value,
    }
    ok = hard is ConformanceClass.UNSOUND and soft is ConformanceClass.APPROXIMATE
    if ok:
        msg = "soft priority is an unsound lowering of hard claims and an approximate one of soft claims"
    else:
        msg = f"expected hard_protected=unsound, soft_priority=approximate; got {hard.value}, {soft.value}"
    return CheckVerdict("C1", ok, evidence, msg)


# -- suite -----------------------------------------------------------------

FIXTURE_FILES = {
    "L1": "L1_native_eviction.jsonl",
    "L2": "L2_write_no_admit.jsonl",
    "L3": "L3_hard_claim_infeasibility.jsonl",
    "L4": "L4_claim_demotion.jsonl",
    "L5": "L5_claim_expiry.jsonl",
    "L6": "L6_materialization_predicate.json",
    "C1": "C1_capability_profile.json",
}
MATERIALIZATION_PROFILES_FILE = "materialization_profiles.json"
LIVE_SCHEDULER_FILE = "live_scheduler_pressure.jsonl"


@dataclass
class FixtureSet:
    traces: dict[str, list[ClaimEvent]]
    materialization: dict[str, Any]
    capability: CapabilityProfile
    live_scheduler: list[ClaimEvent] | None = None

    @classmethod
    def from_dir(cls, directory: str | PathLike) -> "FixtureSet":
        d = Path(directory)
        missing = [name for name in FIXTURE_FILES.values() if not (d / name).is_file()]
        if missing:
            raise MissingFixture(f"{d}: missing {', '.join(missing)}")
        traces = {k: read_trace(d / FIXTURE_FILES[k]) for k in ("L1", "L2", "L3", "L4", "L5")}
        l6 = json.loads((d / FIXTURE_FILES["L6"]).read_text(encoding="utf-8"))
        cap = json.loads((d / FIXTURE_FILES["C1"]).read_text(encoding="utf-8"))
        live = d / LIVE_SCHEDULER_FILE
        return cls(
            traces=traces,
            materialization=l6,
            capability=CapabilityProfile(cap["backend_name"], frozenset(cap["supported"])),
            live_scheduler=read_trace(live) if live.is_file() else None,
        )


@dataclass
class ConformanceReport:
    verdicts: list[CheckVerdict]
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    @property
    def pass_count(self) -> int:
        return sum(v.passed for v in self.verdicts)

    def verdict(self, check_id: str) -> CheckVerdict:
        return next(v for v in self.verdicts if v.check_id == check_id)

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.pass_count,
            "total": len(self.verdicts),
            "checks": [v.to_dict() for v in self.verdicts],
            "extras": self.extras,
        }

    def summary(self) -> str:
        lines = [
            "# Resident-claim conformance",
            "",
            f"{self.pass_count}/{len(self.verdicts)} checks passed.",
            "",
            "| check | result | detail |",
            "|---|---|---|",
        ]
        for v in self.verdicts:
            lines.append(f"| {v.check_id} | {'pass' if v.passed else 'FAIL'} | {v.message} |")
        live = self.extras.get("live_scheduler")
        if live:
            lines += ["", "## Live scheduler fixture (read-only)", ""]
            lines.append(f"- reconstruction: {'ok' if not live['errors'] else 'errors'}")
            for w in live["warnings"]:
                lines.append(f"- warning: {w}")
        return "\n".join(lines) + "\n"

    def write(self, directory: str | PathLike) -> tuple[Path, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        results = d / "results.json"
        results.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        summary = d / "summary.md"
        summary.write_text(self.summary(), encoding="utf-8")
        return results, summary


def run_suite(
    fixtures: FixtureSet | str | PathLike | None = None,
    regenerate_into: str | PathLike | None = None,
) -> ConformanceReport:
    """Run L1-L7 and C1.

    With ``regenerate_into`` the canonical fixtures are first regenerated
    from simulator runs into that directory and then loaded from it.
    """
    if regenerate_into is not None:
        from .fixtures import generate_canonical_fixtures

        generate_canonical_fixtures(regenerate_into)
        fixtures = regenerate_into
    if fixtures is None:
        raise MissingFixture("no fixture set given")
    if not isinstance(fixtures, FixtureSet):
        fixtures = FixtureSet.from_dir(fixtures)
    t = fixtures.traces
    verdicts = [
        check_L1(t["L1"]),
        check_L2(t["L2"]),
        check_L3(t["L3"]),
        check_L4(t["L4"]),
        check_L5(t["L5"]),
        check_L6(fixtures.materialization),
        check_L7(t["L3"]),
        check_C1(fixtures.capability),
    ]
    extras = {}
    if fixtures.live_scheduler is not None:
        extras["live_scheduler"] = reconstruct(fixtures.live_scheduler).to_dict()
    return ConformanceReport(verdicts, extras)
