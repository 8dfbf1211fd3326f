"""Markdown rendering of sweep matrices and conformance results."""
from __future__ import annotations

from typing import Any, Mapping

from .sweep import SweepMatrix

# One glyph per cell outcome so the grid stays narrow.
OUTCOME_GLYPHS = {
    "served_preserved": "S+R",
    "served_resident_lost": "S",
    "refused_resident_preserved": "R",
    "refused_resident_lost": "-",
}


def render_sweep(matrix: SweepMatrix, columns: list[int] | None = None) -> str:
    """Policy x usable-blocks grid.

    ``S`` = active served, ``R`` = resident preserved. Without ``columns``
    the grid shows the sweep ends and the values around the boundary.
    """
    usable = matrix.usable_values
    if columns is None:
        b = matrix.boundary
        picks = {usable[0], usable[-1]} | {u for u in usable if b - 2 <= u <= b + 1}
        columns = sorted(picks)
    lines = [
        f"## Capacity sweep: resident {matrix.resident_blocks}, active {matrix.active_blocks}",
        "",
        f"Feasibility boundary: {matrix.boundary} usable blocks. "
        "S = active served, R = resident preserved.",
        "",
        "| policy | " + " | ".join(str(u) for u in columns) + " | coexists from |",
        "|---|" + "---|" * (len(columns) + 1),
    ]
    for policy in matrix.policies:
        cells = [OUTCOME_GLYPHS[matrix.cell(policy, u).outcome] for u in columns]
        point = matrix.coexistence_point(policy)
        lines.append(f"| {policy} | " + " | ".join(cells) + f" | {point if point is not None else 'never'} |")
    return "\n".join(lines) + "\n"


def render_conformance(results: Mapping[str, Any]) -> str:
    """Render a conformance results document (as written to results.json)."""
    lines = [
        "## Conformance",
        "",
        f"{results['passed']}/{results['total']} checks passed.",
        "",
        "| check | result | detail |",
        "|---|---|---|",
    ]
    for c in results["checks"]:
        lines.append(f"| {c['check_id']} | {'pass' if c['passed'] else 'FAIL'} | {c['message']} |")
    return "\n".join(lines) + "\n"


def render_report(
    sweep: SweepMatrix | None = None,
    conformance: Mapping[str, Any] | None = None,
) -> str:
    parts = ["# KV residency claims report", ""]
    if sweep is not None:
        parts.append(render_sweep(sweep))
    if conformance is not None:
        parts.append(render_conformance(conformance))
    if sweep is None and conformance is None:
        parts.append("Nothing to report.\n")
    return "\n".join(parts)
