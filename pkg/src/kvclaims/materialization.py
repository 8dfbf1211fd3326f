"""Materialization predicates over surviving prefix blocks.

A cached prefix only carries value when its *leading* contiguous survival
reaches a threshold: a block at position 30 is useless for reuse if
position 0 is gone. Reuse accounting is therefore driven by the first
missing block, and ``cached_tokens = first_missing_block * block_size``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from .errors import PositionOutOfRange

if TYPE_CHECKING:
    from .pool import BlockPool

LEADING_PREFIX = "leading_prefix"
DEFAULT_BLOCK_SIZE = 16


@dataclass(frozen=True)
class MaterializationPredicate:
    required_leading_blocks: int
    span_total_blocks: int
    span_value: float = 0.0
    kind: str = LEADING_PREFIX

    def __post_init__(self) -> None:
        if self.kind != LEADING_PREFIX:
            raise ValueError(f"unsupported predicate kind {self.kind!r}")
        if self.required_leading_blocks < 1 or self.span_total_blocks < 1:
            raise ValueError("predicate block counts must be positive")
        if self.required_leading_blocks > self.span_total_blocks:
            raise ValueError("required_leading_blocks exceeds span_total_blocks")
        if self.span_value < 0:
            raise ValueError("span_value must be non-negative")

    @classmethod
    def full_span(cls, blocks: int, value: float = 0.0) -> "MaterializationPredicate":
        return cls(required_leading_blocks=blocks, span_total_blocks=blocks, span_value=value)


@dataclass(frozen=True)
class MaterializationResult:
    surviving_blocks: int
    leading_blocks: int
    first_missing_block: int
    cached_tokens: int
    satisfied: bool
    granted_value: float
    required_leading_blocks: int = 0

    def to_dict(self) -> dict:
        return {
            "surviving_blocks": self.surviving_blocks,
            "leading_blocks": self.leading_blocks,
            "first_missing_block": self.first_missing_block,
            "cached_tokens": self.cached_tokens,
            "satisfied": self.satisfied,
            "granted_value": self.granted_value,
            "required_leading_blocks": self.required_leading_blocks,
        }


def first_missing(positions: Iterable[int]) -> int:
    """Smallest non-negative position absent from ``positions``."""
    present = set(positions)
    k = 0
    while k in present:
        k += 1
    return k


def evaluate(
    predicate: MaterializationPredicate,
    survived_positions: Iterable[int],
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> MaterializationResult:
    survived = set(survived_positions)
    bad = [p for p in survived if not 0 <= p < predicate.span_total_blocks]
    if bad:
        raise PositionOutOfRange(
            f"positions {sorted(bad)[:5]} outside 0..{predicate.span_total_blocks - 1}"
        )
    leading = first_missing(survived)
    satisfied = leading >= predicate.required_leading_blocks
    return MaterializationResult(
        surviving_blocks=len(survived),
        leading_blocks=leading,
        first_missing_block=leading,
        cached_tokens=leading * block_size,
        satisfied=satisfied,
        granted_value=predicate.span_value if satisfied else 0.0,
        required_leading_blocks=predicate.required_leading_blocks,
    )


def thresholded_value(results: Iterable[MaterializationResult]) -> float:
    return sum(r.granted_value for r in results)


# -- ledger checks ---------------------------------------------------------


@dataclass(frozen=True)
class ReuseReport:
    """What a reuse-accounting layer claims survived for one prefix object."""

    survived_positions: frozenset[int]
    cached_tokens: int


@dataclass
class LedgerVerdict:
    checks: dict[str, bool] = field(default_factory=dict)
    details: dict[str, str] = field(default_factory=dict)
    result: MaterializationResult | None = None

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> list[str]:
        return [name for name, ok in self.checks.items() if not ok]


LEDGER_CHECKS = (
    "cached_tokens_match_first_missing",
    "survivors_form_leading_range",
    "evicted_not_counted",
    "block_ids_one_to_one",
    "salted_zero_survival",
)


def report_from_pool(pool: "BlockPool", owner_object: str) -> ReuseReport:
    positions = frozenset(pool.cached_positions(owner_object))
    return ReuseReport(positions, first_missing(positions) * pool.block_size)


def ledger_check(
    owner_object: str,
    pool: "BlockPool",
    predicate: MaterializationPredicate,
    report: ReuseReport | None = None,
) -> LedgerVerdict:
    """Cross-check a reuse report against the pool's own residency table.

    Without ``report`` the pool's view is checked against itself, which is
    consistent by construction; passing a report lets callers audit an
    external accounting layer (or a deliberately faulty one in tests).
    """
    if report is None:
        report = report_from_pool(pool, owner_object)
    bs = pool.block_size
    verdict = LedgerVerdict()
    reported = set(report.survived_positions)
    lead = first_missing(reported)

    ok = report.cached_tokens == lead * bs
    verdict.checks["cached_tokens_match_first_missing"] = ok
    if not ok:
        verdict.details["cached_tokens_match_first_missing"] = (
            f"reported {report.cached_tokens} tokens, first missing block {lead} -> {lead * bs}"
        )

    counted = report.cached_tokens // bs if report.cached_tokens >= 0 else -1
    ok = report.cached_tokens % bs == 0 and set(range(counted)) <= reported
    verdict.checks["survivors_form_leading_range"] = ok
    if not ok:
        verdict.details["survivors_form_leading_range"] = (
            f"{report.cached_tokens} tokens are not backed by a leading run of survivors"
        )

    actual = set(pool.cached_positions(owner_object))
    phantom = reported - actual
    verdict.checks["evicted_not_counted"] = not phantom
    if phantom:
        verdict.details["evicted_not_counted"] = f"positions {sorted(phantom)} are not resident"

    blocks = pool.blocks_of(owner_object)
    positions = [b.prefix_position for b in blocks]
    ok = len(positions) == len(set(positions)) and len({b.block_id for b in blocks}) == len(blocks)
    verdict.checks["block_ids_one_to_one"] = ok
    if not ok:
        verdict.details["block_ids_one_to_one"] = "duplicate prefix positions or block ids"

    identity = pool.identity_of(owner_object)
    if identity is not None and identity.salted:
        leak = pool.lookup_leading(owner_object, identity.unsalted())
        verdict.checks["salted_zero_survival"] = leak == 0
        if leak:
            verdict.details["salted_zero_survival"] = f"unsalted query reused {leak} blocks"
    else:
        verdict.checks["salted_zero_survival"] = True
    # The predicate is judged on what actually survived, not on the report.
    verdict.result = evaluate(predicate, [p for p in actual if p < predicate.span_total_blocks], bs)
    return verdict


# -- retention strategies --------------------------------------------------
#
# Each strategy maps spans (name -> predicate) and a retained-block budget to
# a survival profile (name -> surviving positions). They generate profiles
# for exploration; acceptance replays recorded profiles instead.


def native_retention(spans: Mapping[str, MaterializationPredicate], budget: int) -> dict[str, set[int]]:
    """Every span lost to ordinary pressure."""
    return {name: set() for name in spans}


def salted_retention(spans: Mapping[str, MaterializationPredicate], budget: int) -> dict[str, set[int]]:
    """Blocks stored under a salted namespace; an unsalted query sees none."""
    return {name: set() for name in spans}


def naive_fair_share(spans: Mapping[str, MaterializationPredicate], budget: int) -> dict[str, set[int]]:
    """Split the budget in proportion to span size, keeping leading blocks.

    Largest-remainder rounding, ties broken by span order.
    """
    total = sum(p.span_total_blocks for p in spans.values())
    if total == 0:
        return {}
    budget = min(budget, total)
    exact = {n: budget * p.span_total_blocks / total for n, p in spans.items()}
    share = {n: int(v) for n, v in exact.items()}
    leftover = budget - sum(share.values())
    order = sorted(spans, key=lambda n: -(exact[n] - share[n]))
    for name in order[:leftover]:
        share[name] += 1
    return {n: set(range(min(share[n], spans[n].span_total_blocks))) for n in spans}


def complete_prefix_fair_share(
    spans: Mapping[str, MaterializationPredicate], budget: int
) -> dict[str, set[int]]:
    """Keep whole required prefixes, in span order, while the budget lasts."""
    out: dict[str, set[int]] = {}
    left = budget
    for name, p in spans.items():
        if p.span_total_blocks <= left:
            out[name] = set(range(p.span_total_blocks))
            left -= p.span_total_blocks
        else:
            out[name] = set()
    return out


def value_density(spans: Mapping[str, MaterializationPredicate], budget: int) -> dict[str, set[int]]:
    """Greedy by value per claimed block, whole spans only."""
    order = sorted(spans, key=lambda n: -spans[n].span_value / spans[n].span_total_blocks)
    out = {name: set() for name in spans}
    left = budget
    for name in order:
        p = spans[name]
        if p.span_total_blocks <= left:
            out[name] = set(range(p.span_total_blocks))
            left -= p.span_total_blocks
    return out


RETENTION_STRATEGIES = {
    "native": native_retention,
    "naive_fair_share": naive_fair_share,
    "complete_prefix_fair_share": complete_prefix_fair_share,
    "value_density": value_density,
    "salted": salted_retention,
}


def evaluate_profile(
    spans: Mapping[str, MaterializationPredicate],
    profile: Mapping[str, Iterable[int]],
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> dict[str, MaterializationResult]:
    return {name: evaluate(spans[name], profile.get(name, ()), block_size) for name in spans}


def leading_profile(leading: Sequence[int], names: Sequence[str]) -> dict[str, set[int]]:
    """Survival profile where span ``names[i]`` keeps positions ``0..leading[i]-1``."""
    return {n: set(range(k)) for n, k in zip(names, leading)}
