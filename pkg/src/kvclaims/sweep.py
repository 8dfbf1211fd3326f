"""Capacity sweep over usable pool size for a fixed resident/active pair."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from os import PathLike
from pathlib import Path
from typing import Iterable, Sequence

from .arbiter import ConflictAction
from .runtime import ClaimDecl, RequestDecl, ScenarioConfig, run_scenario

RESIDENT_CLAIM = "claim:resident"
ACTIVE_REQUEST = "active"


@dataclass(frozen=True)
class SweepCell:
    policy: str
    usable_blocks: int
    active_served: bool
    resident_preserved: bool
    refusal: bool
    deferred: bool
    evicted_blocks: int
    losses_after_release: int
    claim_state: str | None

    @property
    def outcome(self) -> str:
        if self.active_served and self.resident_preserved:
            return "served_preserved"
        if self.active_served:
            return "served_resident_lost"
        return "refused_resident_preserved" if self.resident_preserved else "refused_resident_lost"


@dataclass
class SweepMatrix:
    resident_blocks: int
    active_blocks: int
    cells: list[SweepCell]

    @property
    def boundary(self) -> int:
        return self.resident_blocks + self.active_blocks

    @property
    def policies(self) -> list[str]:
        return list(dict.fromkeys(c.policy for c in self.cells))

    @property
    def usable_values(self) -> list[int]:
        return sorted({c.usable_blocks for c in self.cells})

    def cell(self, policy: str | ConflictAction, usable: int) -> SweepCell:
        policy = ConflictAction.parse(policy).value
        for c in self.cells:
            if c.policy == policy and c.usable_blocks == usable:
                return c
        raise KeyError((policy, usable))

    def row(self, policy: str | ConflictAction) -> list[SweepCell]:
        policy = ConflictAction.parse(policy).value
        return sorted((c for c in self.cells if c.policy == policy), key=lambda c: c.usable_blocks)

    def coexistence_point(self, policy: str | ConflictAction) -> int | None:
        """Smallest usable size from which the policy serves and preserves."""
        point = None
        for c in reversed(self.row(policy)):
            if c.active_served and c.resident_preserved:
                point = c.usable_blocks
            else:
                break
        return point

    def to_dict(self) -> dict:
        return {
            "resident_blocks": self.resident_blocks,
            "active_blocks": self.active_blocks,
            "feasibility_boundary_blocks": self.boundary,
            "policies": self.policies,
            "usable_blocks": self.usable_values,
            "cells": [dict(asdict(c), outcome=c.outcome) for c in self.cells],
        }

    def write(self, path: str | PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, data: dict) -> "SweepMatrix":
        keys = SweepCell.__dataclass_fields__
        cells = [SweepCell(**{k: v for k, v in c.items() if k in keys}) for c in data["cells"]]
        return cls(data["resident_blocks"], data["active_blocks"], cells)


def sweep_config(resident: int, active: int, usable: int, policy: ConflictAction | str) -> ScenarioConfig:
    return ScenarioConfig(
        usable_blocks=usable,
        claims=(ClaimDecl(RESIDENT_CLAIM, "resident", resident),),
        requests=(RequestDecl(ACTIVE_REQUEST, (active,), arrival_step=1),),
        policy=ConflictAction.parse(policy),
        name=f"sweep-{policy}-{usable}",
    )


def run_cell(resident: int, active: int, usable: int, policy: ConflictAction | str) -> SweepCell:
    out = run_scenario(sweep_config(resident, active, usable, policy))
    return SweepCell(
        policy=ConflictAction.parse(policy).value,
        usable_blocks=usable,
        active_served=ACTIVE_REQUEST in out.served_requests,
        resident_preserved=out.resident_preserved(RESIDENT_CLAIM),
        refusal=ACTIVE_REQUEST in out.refused_requests,
        deferred=ACTIVE_REQUEST in out.deferred_requests,
        evicted_blocks=out.evicted_blocks,
        losses_after_release=out.losses_after_release,
        claim_state=out.final_claim_states.get(RESIDENT_CLAIM),
    )


def capacity_sweep(
    resident: int,
    active: int,
    usable_range: Iterable[int],
    policies: Sequence[ConflictAction | str] = tuple(ConflictAction),
) -> SweepMatrix:
    """Run one fresh scenario per (policy, usable) cell."""
    usable_range = list(usable_range)
    if not usable_range or not policies:
        raise ValueError("usable_range and policies must be non-empty")
    cells = [run_cell(resident, active, u, p) for p in policies for u in usable_range]
    return SweepMatrix(resident, active, cells)
