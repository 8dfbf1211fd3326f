"""Claim-event schema, JSONL serialization and trace reading.

Every state change in the runtime is reported as one :class:`ClaimEvent`.
A trace is a JSONL file with one event per line, ordered by
``(step, emission sequence)``. Conformance checks consume nothing else.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from os import PathLike
from pathlib import Path
from typing import Any, Iterable, Iterator, TextIO

from .errors import InvalidEvent, MalformedLine, OutOfOrderStep

FEASIBLE = "feasible"
INFEASIBLE = "infeasible_preserve_resident_and_active"

# Event vocabulary. Unknown types are preserved on read.
CLAIM_SUBMITTED = "claim_submitted"
CLAIM_ACCEPTED = "claim_accepted"
CLAIM_REJECTED = "claim_rejected"
CLAIM_MATERIALIZED = "claim_materialized"
CLAIM_DEMOTED = "claim_demoted"
CLAIM_EXPIRED = "claim_expired"
CLAIM_HARMED = "claim_harmed"
ACTIVE_REFUSED = "active_request_refused"
ACTIVE_DEFERRED = "active_deferred"
BLOCK_EVICTED = "block_evicted"
BLOCK_LOSS_AFTER_RELEASE = "block_loss_after_release"
WRITE_ADMISSION_DENIED = "write_admission_denied"
REQUEST_SERVED = "request_served"
# Plumbing events: make caching, chunk growth and terminal stops replayable.
RESIDENT_CACHED = "resident_cached"
ACTIVE_ALLOCATED = "active_allocated"
REQUEST_STOPPED = "request_stopped"

CAPACITY_FIELDS = (
    "protected_resident_blocks",
    "active_live_blocks_required",
    "resident_plus_active_blocks",
    "usable_blocks",
    "capacity_shortfall_blocks",
)


@dataclass
class ClaimEvent:
    """One telemetry record.

    Field order here is the serialization order, so the refusal payload
    lines up key-for-key with the canonical refusal example once ``step``
    is dropped. Fields left as ``None`` are omitted from the JSON.
    """

    event: str
    claim_id: str | None = None
    request_id: str | None = None
    step: int | None = None
    blocking_claim_ids: list[str] | None = None
    protected_resident_blocks: int | None = None
    active_live_blocks_required: int | None = None
    resident_plus_active_blocks: int | None = None
    usable_blocks: int | None = None
    capacity_shortfall_blocks: int | None = None
    feasibility: str | None = None
    leading_blocks: int | None = None
    required_leading_blocks: int | None = None
    satisfied: bool | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            if f.name == "extra":
                continue
            value = getattr(self, f.name)
            if value is not None:
                out[f.name] = list(value) if f.name == "blocking_claim_ids" else value
        for key, value in self.extra.items():
            out.setdefault(key, value)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ClaimEvent":
        if not isinstance(data, dict) or not isinstance(data.get("event"), str):
            raise InvalidEvent("event record must be an object with a string 'event'")
        known = {f.name for f in fields(cls)} - {"extra"}
        kwargs = {k: v for k, v in data.items() if k in known}
        extra = {k: v for k, v in data.items() if k not in known}
        return cls(**kwargs, extra=extra)

    def get(self, key: str, default: Any = None) -> Any:
        if key != "extra" and hasattr(self, key):
            value = getattr(self, key)
            return default if value is None else value
        return self.extra.get(key, default)

    def has_capacity(self) -> bool:
        return any(getattr(self, name) is not None for name in CAPACITY_FIELDS)


def validate(event: ClaimEvent) -> None:
    """Raise :class:`InvalidEvent` naming the first violated invariant."""
    if not event.event:
        raise InvalidEvent("event type must be a non-empty string")
    if event.step is None or not isinstance(event.step, int) or event.step < 0:
        raise InvalidEvent("step must be a non-negative integer")
    present = [name for name in CAPACITY_FIELDS if getattr(event, name) is not None]
    if present and len(present) != len(CAPACITY_FIELDS):
        missing = sorted(set(CAPACITY_FIELDS) - set(present))
        raise InvalidEvent(f"capacity fields appear together or not at all; missing {missing}")
    if present:
        protected = event.protected_resident_blocks
        active = event.active_live_blocks_required
        if event.resident_plus_active_blocks != protected + active:
            raise InvalidEvent("resident_plus_active_blocks != protected + active")
        expected = max(0, protected + active - event.usable_blocks)
        if event.capacity_shortfall_blocks != expected:
            raise InvalidEvent(
                f"capacity_shortfall_blocks {event.capacity_shortfall_blocks} != {expected}"
            )
        if event.feasibility is not None:
            label = FEASIBLE if expected == 0 else INFEASIBLE
            if event.feasibility != label:
                raise InvalidEvent(f"feasibility {event.feasibility!r} contradicts shortfall")
    if event.event == ACTIVE_REFUSED:
        if event.blocking_claim_ids is None:
            raise InvalidEvent("active_request_refused requires blocking_claim_ids")
        if not present:
            raise InvalidEvent("active_request_refused requires all capacity fields")


class TraceSink:
    """Single-writer event log.

    Events are kept in memory and, when ``stream`` is given, written through
    as they are emitted.
    """

    def __init__(self, stream: TextIO | None = None):
        self.events: list[ClaimEvent] = []
        self._stream = stream

    def emit(self, event: ClaimEvent) -> None:
        validate(event)
        if self.events and event.step < self.events[-1].step:
            raise InvalidEvent(f"step {event.step} precedes step {self.events[-1].step}")
        self.events.append(event)
        if self._stream is not None:
            self._stream.write(event.to_json() + "\n")

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    def write(self, path: str | PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        return path

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[ClaimEvent]:
        return iter(self.events)


def emit(event: ClaimEvent, sink: TraceSink) -> None:
    sink.emit(event)


def _lines(source: Any) -> list[str]:
    if isinstance(source, (str, PathLike)):
        return Path(source).read_text(encoding="utf-8").splitlines()
    if hasattr(source, "read"):
        return source.read().splitlines()
    return [line.rstrip("\n") for line in source]


def read_trace(source: Any) -> list[ClaimEvent]:
    """Parse a JSONL trace from a path, text stream or iterable of lines.

    Steps must be non-decreasing. Records without a ``step`` (as found in
    some externally recorded traces) are accepted and skip the order check.
    """
    events: list[ClaimEvent] = []
    last_step: int | None = None
    for lineno, raw in enumerate(_lines(source), start=1):
        text = raw.strip()
        if not text:
            continue
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedLine(lineno, exc.msg) from None
        try:
            event = ClaimEvent.from_dict(data)
        except (InvalidEvent, TypeError) as exc:
            raise MalformedLine(lineno, str(exc)) from None
        if event.step is not None:
            if last_step is not None and event.step < last_step:
                raise OutOfOrderStep(lineno, event.step, last_step)
            last_step = event.step
        events.append(event)
    return events


def write_trace(events: Iterable[ClaimEvent], path: str | PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(e.to_json() + "\n" for e in events), encoding="utf-8")
    return path
