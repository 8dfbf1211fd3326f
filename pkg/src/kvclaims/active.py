"""Active requests: chunked prefill, live-KV accumulation, write admission.

Under full attention every chunk a request has prefilled stays live until
the request finishes, so a chunked schedule reaches the same peak as one
big chunk. Write admission is a separate decision taken at completion: it
decides whether the finished blocks become reusable prefix state, and
never changes how the request allocates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, Sequence

from . import telemetry as tm
from .errors import EmptySchedule, NoChunksRemaining, UnknownRequest
from .pool import BlockPool
from .telemetry import ClaimEvent


class RequestStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    DEFERRED = "deferred"
    REFUSED = "refused"
    COMPLETED = "completed"


TERMINAL_REQUEST_STATES = frozenset({RequestStatus.REFUSED, RequestStatus.COMPLETED})


def peak_live_blocks(chunk_schedule: Sequence[int]) -> int:
    if not chunk_schedule:
        raise EmptySchedule("chunk schedule is empty")
    if any(c <= 0 for c in chunk_schedule):
        raise ValueError("chunk sizes must be positive")
    return sum(chunk_schedule)


@dataclass
class ActiveRequest:
    request_id: str
    chunk_schedule: tuple[int, ...]
    write_admitted: bool = True
    object_id: str | None = None
    arrival_step: int = 0
    live_blocks: int = 0
    status: RequestStatus = RequestStatus.PENDING
    next_chunk: int = 0
    deferrals: int = 0
    stop_reason: str | None = None
    trajectory: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.chunk_schedule = tuple(self.chunk_schedule)
        if any(c <= 0 for c in self.chunk_schedule):
            raise ValueError(f"{self.request_id}: chunk sizes must be positive")

    @property
    def prefix_object(self) -> str:
        return self.object_id or self.request_id

    @property
    def peak_blocks(self) -> int:
        return peak_live_blocks(self.chunk_schedule)

    @property
    def chunks_remaining(self) -> int:
        return len(self.chunk_schedule) - self.next_chunk

    @property
    def terminal(self) -> bool:
        return self.status in TERMINAL_REQUEST_STATES

    def set_write_admission(self, admit: bool) -> None:
        if self.status is RequestStatus.COMPLETED:
            raise UnknownRequest(f"{self.request_id} already completed")
        self.write_admitted = bool(admit)


class ArbiterHandle(Protocol):
    def request_chunk(self, request: ActiveRequest, blocks: int, step: int) -> "ChunkOutcome": ...


@dataclass(frozen=True)
class ChunkOutcome:
    kind: str  # allocated | deferred | refused | waiting
    blocks: int = 0
    live_blocks: int = 0
    evicted_block_ids: tuple[int, ...] = ()
    event: ClaimEvent | None = None


def schedule_chunk(request: ActiveRequest, arbiter: ArbiterHandle, step: int = 0) -> ChunkOutcome:
    if request.status not in (RequestStatus.PENDING, RequestStatus.RUNNING, RequestStatus.DEFERRED):
        raise ValueError(f"{request.request_id} is {request.status.value}")
    if request.chunks_remaining <= 0:
        raise NoChunksRemaining(request.request_id)
    return arbiter.request_chunk(request, request.chunk_schedule[request.next_chunk], step)


def record_chunk(request: ActiveRequest, blocks: int) -> None:
    request.live_blocks += blocks
    request.next_chunk += 1
    request.status = RequestStatus.RUNNING
    request.trajectory.append(request.live_blocks)


def complete_request(request: ActiveRequest, pool: BlockPool, step: int) -> int:
    """Serve a fully prefilled request and hand its blocks back to the pool."""
    pool.clock = step
    pool.sink.emit(
        ClaimEvent(
            tm.REQUEST_SERVED,
            request_id=request.request_id,
            step=step,
            extra={"active_live_blocks": request.live_blocks},
        )
    )
    count = pool.free_request(
        request.request_id, admit=request.write_admitted, object_id=request.prefix_object
    )
    if not request.write_admitted:
        pool.sink.emit(
            ClaimEvent(
                tm.WRITE_ADMISSION_DENIED,
                request_id=request.request_id,
                step=step,
                extra={"object_id": request.prefix_object, "blocks": count},
            )
        )
    request.status = RequestStatus.COMPLETED
    request.stop_reason = "completed"
    return count
