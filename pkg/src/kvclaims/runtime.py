"""Scenario configuration and the deterministic step loop.

Each step runs four phases in a fixed order:

1. expiry: claims whose duration window closed are expired and released;
2. arrivals: claims due this step are submitted (and cached), then
   requests due this step join the active queue;
3. arbitration: every queued request asks the arbiter for its next chunk;
4. completion: fully prefilled requests are served and freed.

Running expiry first guarantees a release event precedes any block loss in
the same step.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from os import PathLike
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import telemetry as tm
from .active import ActiveRequest, RequestStatus, complete_request, schedule_chunk
from .arbiter import Arbiter, ConflictAction
from .claims import (
    CacheIdentity,
    ClaimRegistry,
    EXCLUDING_MODES,
    ClaimState,
    ProtectionMode,
    ResidentClaimInput,
    Verdict,
)
from .errors import ConfigInvalid, UnknownPolicy
from .materialization import DEFAULT_BLOCK_SIZE, MaterializationPredicate, MaterializationResult, evaluate
from .pool import BlockPool
from .telemetry import ClaimEvent, TraceSink

STOP_STALLED = "stalled_no_capacity"
STALL_STEPS = 3


@dataclass(frozen=True)
class ClaimDecl:
    claim_id: str
    object_id: str
    span_blocks: int
    required_leading_blocks: int | None = None
    span_value: float = 0.0
    footprint_blocks: int | None = None
    protection_mode: ProtectionMode = ProtectionMode.HARD_PROTECTED
    duration_steps: int | None = None
    submit_step: int = 0
    owner_scope: str = "default"
    namespace_salt: str = ""
    verdict: Verdict | None = None

    @property
    def predicate(self) -> MaterializationPredicate:
        return MaterializationPredicate(
            required_leading_blocks=self.required_leading_blocks or self.span_blocks,
            span_total_blocks=self.span_blocks,
            span_value=self.span_value,
        )

    def to_input(self, block_size: int) -> ResidentClaimInput:
        return ResidentClaimInput(
            claim_id=self.claim_id,
            owner_scope=self.owner_scope,
            object_id=self.object_id,
            materialization_predicate=self.predicate,
            footprint_blocks=self.footprint_blocks if self.footprint_blocks is not None else self.span_blocks,
            protection_mode=self.protection_mode,
            cache_identity=CacheIdentity(namespace_salt=self.namespace_salt, block_size_tokens=block_size),
            duration_steps=self.duration_steps,
        )


@dataclass(frozen=True)
class RequestDecl:
    request_id: str
    chunk_schedule: tuple[int, ...]
    write_admit: bool = True
    arrival_step: int = 0
    object_id: str | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    usable_blocks: int
    claims: tuple[ClaimDecl, ...] = ()
    requests: tuple[RequestDecl, ...] = ()
    policy: ConflictAction = ConflictAction.RESIDENT_VICTIM_EXCLUSION
    block_size_tokens: int = DEFAULT_BLOCK_SIZE
    defer_budget: int = 1
    reserve_blocks: int | None = None
    relax_claims: tuple[str, ...] = ()
    horizon_steps: int = 0
    seed: int = 0
    name: str = "scenario"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScenarioConfig":
        return _parse_config(data)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["policy"] = self.policy.value
        out["relax_claims"] = list(self.relax_claims)
        for c in out["claims"]:
            c["protection_mode"] = ProtectionMode(c["protection_mode"]).value
            if c["verdict"] is not None:
                c["verdict"] = Verdict(c["verdict"]).value
        for r in out["requests"]:
            r["chunk_schedule"] = list(r["chunk_schedule"])
        return out

    def with_policy(self, policy: ConflictAction | str) -> "ScenarioConfig":
        return replace(self, policy=ConflictAction.parse(policy))


def _require(data: Mapping[str, Any], key: str, path: str, kind: type) -> Any:
    if key not in data:
        raise ConfigInvalid(f"{path}.{key}", "required field missing")
    value = data[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigInvalid(f"{path}.{key}", f"expected integer, got {value!r}")
    if kind is str and not isinstance(value, str):
        raise ConfigInvalid(f"{path}.{key}", f"expected string, got {value!r}")
    return value


def _opt_int(data: Mapping[str, Any], key: str, path: str, minimum: int | None = None) -> int | None:
    value = data.get(key)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigInvalid(f"{path}.{key}", f"expected integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigInvalid(f"{path}.{key}", f"must be >= {minimum}")
    return value


_CLAIM_KEYS = {f for f in ClaimDecl.__dataclass_fields__}
_REQUEST_KEYS = {f for f in RequestDecl.__dataclass_fields__}
_TOP_KEYS = {f for f in ScenarioConfig.__dataclass_fields__}


def _parse_config(data: Mapping[str, Any]) -> ScenarioConfig:
    if not isinstance(data, Mapping):
        raise ConfigInvalid("$", "config must be a mapping")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigInvalid(f"$.{sorted(unknown)[0]}", "unknown field")
    usable = _require(data, "usable_blocks", "$", int)
    if usable <= 0:
        raise ConfigInvalid("$.usable_blocks", "must be positive")
    block_size = _opt_int(data, "block_size_tokens", "$", 1) or DEFAULT_BLOCK_SIZE
    try:
        policy = ConflictAction.parse(data.get("policy", ConflictAction.RESIDENT_VICTIM_EXCLUSION.value))
    except UnknownPolicy as exc:
        raise ConfigInvalid("$.policy", f"unknown policy {exc}") from None

    claims = []
    seen: set[str] = set()
    for i, raw in enumerate(data.get("claims") or []):
        path = f"$.claims[{i}]"
        if not isinstance(raw, Mapping):
            raise ConfigInvalid(path, "claim must be a mapping")
        extra = set(raw) - _CLAIM_KEYS
        if extra:
            raise ConfigInvalid(f"{path}.{sorted(extra)[0]}", "unknown field")
        cid = _require(raw, "claim_id", path, str)
        if cid in seen:
            raise ConfigInvalid(f"{path}.claim_id", f"duplicate claim id {cid!r}")
        seen.add(cid)
        span = _require(raw, "span_blocks", path, int)
        if span < 1:
            raise ConfigInvalid(f"{path}.span_blocks", "must be positive")
        required = _opt_int(raw, "required_leading_blocks", path, 1)
        if required is not None and required > span:
            raise ConfigInvalid(f"{path}.required_leading_blocks", "exceeds span_blocks")
        try:
            mode = ProtectionMode(raw.get("protection_mode", ProtectionMode.HARD_PROTECTED.value))
        except ValueError:
            raise ConfigInvalid(f"{path}.protection_mode", f"unknown mode {raw.get('protection_mode')!r}") from None
        verdict = raw.get("verdict")
        if verdict is not None:
            try:
                verdict = Verdict(verdict)
            except ValueError:
                raise ConfigInvalid(f"{path}.verdict", f"unknown verdict {verdict!r}") from None
        value = raw.get("span_value", 0.0)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
            raise ConfigInvalid(f"{path}.span_value", "expected non-negative number")
        claims.append(
            ClaimDecl(
                claim_id=cid,
                object_id=raw.get("object_id", cid),
                span_blocks=span,
                required_leading_blocks=required,
                span_value=float(value),
                footprint_blocks=_opt_int(raw, "footprint_blocks", path, 1),
                protection_mode=mode,
                duration_steps=_opt_int(raw, "duration_steps", path, 1),
                submit_step=_opt_int(raw, "submit_step", path, 0) or 0,
                owner_scope=str(raw.get("owner_scope", "default")),
                namespace_salt=str(raw.get("namespace_salt", "")),
                verdict=verdict,
            )
        )

    requests = []
    rseen: set[str] = set()
    for i, raw in enumerate(data.get("requests") or []):
        path = f"$.requests[{i}]"
        if not isinstance(raw, Mapping):
            raise ConfigInvalid(path, "request must be a mapping")
        extra = set(raw) - _REQUEST_KEYS
        if extra:
            raise ConfigInvalid(f"{path}.{sorted(extra)[0]}", "unknown field")
        rid = _require(raw, "request_id", path, str)
        if rid in rseen:
            raise ConfigInvalid(f"{path}.request_id", f"duplicate request id {rid!r}")
        rseen.add(rid)
        sched = raw.get("chunk_schedule")
        if (
            not isinstance(sched, list)
            or not sched
            or any(isinstance(c, bool) or not isinstance(c, int) or c <= 0 for c in sched)
        ):
            raise ConfigInvalid(f"{path}.chunk_schedule", "must be a non-empty list of positive integers")
        admit = raw.get("write_admit", True)
        if not isinstance(admit, bool):
            raise ConfigInvalid(f"{path}.write_admit", "expected boolean")
        requests.append(
            RequestDecl(
                request_id=rid,
                chunk_schedule=tuple(sched),
                write_admit=admit,
                arrival_step=_opt_int(raw, "arrival_step", path, 0) or 0,
                object_id=raw.get("object_id"),
            )
        )

    relax = tuple(data.get("relax_claims") or ())
    for cid in relax:
        if cid not in seen:
            raise ConfigInvalid("$.relax_claims", f"names undeclared claim {cid!r}")
    defer_budget = _opt_int(data, "defer_budget", "$", 0)
    return ScenarioConfig(
        usable_blocks=usable,
        claims=tuple(claims),
        requests=tuple(requests),
        policy=policy,
        block_size_tokens=block_size,
        defer_budget=1 if defer_budget is None else defer_budget,
        reserve_blocks=_opt_int(data, "reserve_blocks", "$", 0),
        relax_claims=relax,
        horizon_steps=_opt_int(data, "horizon_steps", "$", 0) or 0,
        seed=_opt_int(data, "seed", "$") or 0,
        name=str(data.get("name", "scenario")),
    )


def load_config(path: str | PathLike) -> ScenarioConfig:
    """Read a YAML (or JSON, which YAML parses too) scenario document."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigInvalid(str(path), f"unparseable document: {exc}") from None
    return ScenarioConfig.from_dict(data)


@dataclass
class ScenarioOutcome:
    name: str
    policy: str
    trace: str
    final_claim_states: dict[str, str]
    materialization: dict[str, MaterializationResult]
    served_requests: list[str]
    refused_requests: list[str]
    deferred_requests: list[str]
    stop_reasons: dict[str, str]
    live_trajectories: dict[str, list[int]]
    reusable_tokens: dict[str, int]
    evicted_blocks: int
    losses_after_release: int
    final_stats: dict[str, int]
    steps: int
    trace_path: str | None = None
    events: list[ClaimEvent] = field(default_factory=list, repr=False)

    def resident_preserved(self, claim_or_object: str | None = None) -> bool:
        if claim_or_object is not None:
            return self.materialization[claim_or_object].satisfied
        return all(r.satisfied for r in self.materialization.values())

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.event == kind)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "policy": self.policy,
            "trace_path": self.trace_path,
            "steps": self.steps,
            "final_claim_states": self.final_claim_states,
            "materialization": {k: v.to_dict() for k, v in self.materialization.items()},
            "served_requests": self.served_requests,
            "refused_requests": self.refused_requests,
            "deferred_requests": self.deferred_requests,
            "stop_reasons": self.stop_reasons,
            "live_trajectories": self.live_trajectories,
            "reusable_tokens": self.reusable_tokens,
            "evicted_blocks": self.evicted_blocks,
            "losses_after_release": self.losses_after_release,
            "final_stats": self.final_stats,
        }


class MicroRuntime:
    """One runtime instance: registry, pool, arbiter and a shared trace."""

    def __init__(self, config: ScenarioConfig, sink: TraceSink | None = None, validate: bool = False):
        self.config = config
        self.sink = sink if sink is not None else TraceSink()
        self.claims = ClaimRegistry(self.sink)
        self.pool = BlockPool(
            config.usable_blocks,
            config.block_size_tokens,
            sink=self.sink,
            claims=self.claims,
            validate=validate,
        )
        self.arbiter = Arbiter(
            self.pool,
            config.policy,
            defer_budget=config.defer_budget,
            reserve_blocks=config.reserve_blocks,
        )
        self.requests: dict[str, ActiveRequest] = {}
        self.ever_deferred: list[str] = []
        self._deferred_at: dict[str, int] = {}
        self.step = 0

    # -- phases ------------------------------------------------------------

    def _expire(self, step: int) -> None:
        for cid in self.claims.tick_expiry(step):
            self.pool.release_blocks(cid, "expiry")

    def _submit(self, decl: ClaimDecl, step: int) -> None:
        spec = decl.to_input(self.config.block_size_tokens)
        identity = spec.cache_identity
        if not self.config.policy.honors_claims:
            # Native paths see the hinted prefix as ordinary cached state.
            if self.pool.reclaim(decl.span_blocks):
                self.pool.cache_resident(decl.object_id, decl.span_blocks, None, identity)
            return
        decision = self.claims.submit_claim(spec, self.pool.usable_blocks, step, decl.verdict)
        if decision.verdict is Verdict.REJECTED:
            return
        protected = self.pool.protected_claims()
        if not self.pool.reclaim(decl.span_blocks, protected):
            return
        self.pool.cache_resident(decl.object_id, decl.span_blocks, decl.claim_id, identity)
        if decision.verdict is not Verdict.ACCEPTED:
            return
        if spec.protection_mode in EXCLUDING_MODES:
            self.pool.touch_protect(decl.claim_id)
        pred = spec.materialization_predicate
        survivors = [q for q in self.pool.cached_positions(decl.object_id) if q < pred.span_total_blocks]
        result = evaluate(pred, survivors, self.pool.block_size)
        if result.satisfied:
            self.claims.transition(
                decl.claim_id,
                ClaimState.MATERIALIZED,
                step,
                object_id=decl.object_id,
                leading_blocks=result.leading_blocks,
                required_leading_blocks=result.required_leading_blocks,
                satisfied=True,
            )

    def _arrive(self, decl: RequestDecl) -> None:
        req = ActiveRequest(
            decl.request_id,
            decl.chunk_schedule,
            write_admitted=decl.write_admit,
            object_id=decl.object_id,
            arrival_step=decl.arrival_step,
        )
        self.arbiter.prepare(req)
        self.requests[decl.request_id] = req

    def _arbitrate(self, step: int) -> None:
        for req in list(self.requests.values()):
            if req.terminal or req.chunks_remaining == 0:
                continue
            if req.status is RequestStatus.DEFERRED and self._deferred_at.get(req.request_id) == step:
                continue
            out = schedule_chunk(req, self.arbiter, step)
            if out.kind == "deferred":
                self._deferred_at[req.request_id] = step
                if req.request_id not in self.ever_deferred:
                    self.ever_deferred.append(req.request_id)

    def _complete(self, step: int) -> None:
        for req in self.requests.values():
            if req.status is RequestStatus.RUNNING and req.chunks_remaining == 0:
                complete_request(req, self.pool, step)

    def _stall(self, step: int) -> None:
        for req in self.requests.values():
            if req.terminal:
                continue
            if self.pool.request_blocks(req.request_id):
                self.pool.free_request(req.request_id, admit=False)
            req.status = RequestStatus.REFUSED
            req.stop_reason = STOP_STALLED
            self.sink.emit(
                ClaimEvent(tm.REQUEST_STOPPED, request_id=req.request_id, step=step, extra={"stop_reason": STOP_STALLED})
            )

    # -- loop --------------------------------------------------------------

    def run(self) -> ScenarioOutcome:
        cfg = self.config
        last_arrival = max(
            [c.submit_step for c in cfg.claims] + [r.arrival_step for r in cfg.requests] + [0]
        )
        idle = 0
        step = 0
        while True:
            self.pool.clock = step
            before = len(self.sink)
            self._expire(step)
            for decl in cfg.claims:
                if decl.submit_step == step:
                    self._submit(decl, step)
            for decl in cfg.requests:
                if decl.arrival_step == step:
                    self._arrive(decl)
            self._arbitrate(step)
            self._complete(step)

            pending = [r for r in self.requests.values() if not r.terminal]
            if step >= last_arrival and step >= cfg.horizon_steps and not pending:
                break
            idle = idle + 1 if len(self.sink) == before and step >= last_arrival else 0
            if idle >= STALL_STEPS and step >= cfg.horizon_steps:
                self._stall(step)
                break
            step += 1
        self.step = step
        return self.outcome()

    def outcome(self) -> ScenarioOutcome:
        cfg = self.config
        bs = self.pool.block_size
        materialization = {}
        for decl in cfg.claims:
            pred = decl.predicate
            survivors = [p for p in self.pool.cached_positions(decl.object_id) if p < pred.span_total_blocks]
            materialization[decl.claim_id] = evaluate(pred, survivors, bs)
        reqs = self.requests.values()
        stats = self.pool.stats()
        return ScenarioOutcome(
            name=cfg.name,
            policy=cfg.policy.value,
            trace=self.sink.to_jsonl(),
            final_claim_states={cid: s.value for cid, s in self.claims.states().items()},
            materialization=materialization,
            served_requests=[r.request_id for r in reqs if r.status is RequestStatus.COMPLETED],
            refused_requests=[r.request_id for r in reqs if r.status is RequestStatus.REFUSED],
            deferred_requests=list(self.ever_deferred),
            stop_reasons={r.request_id: r.stop_reason for r in reqs if r.stop_reason},
            live_trajectories={r.request_id: list(r.trajectory) for r in reqs},
            reusable_tokens={r.prefix_object: self.pool.lookup_leading(r.prefix_object) * bs for r in reqs},
            evicted_blocks=sum(1 for e in self.sink if e.event == tm.BLOCK_EVICTED),
            losses_after_release=sum(1 for e in self.sink if e.event == tm.BLOCK_LOSS_AFTER_RELEASE),
            final_stats=asdict(stats),
            steps=self.step + 1,
            events=list(self.sink.events),
        )


def run_scenario(
    config: ScenarioConfig | Mapping[str, Any],
    trace_path: str | PathLike | None = None,
    validate: bool = False,
) -> ScenarioOutcome:
    """Run a scenario to quiescence; identical configs give identical traces."""
    if not isinstance(config, ScenarioConfig):
        config = ScenarioConfig.from_dict(config)
    outcome = MicroRuntime(config, validate=validate).run()
    if trace_path is not None:
        path = Path(trace_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(outcome.trace, encoding="utf-8")
        outcome.trace_path = str(path)
    return outcome


def write_outcome(outcome: ScenarioOutcome, path: str | PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(outcome.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
