"""One test per acceptance criterion, each printing a single PASS/FAIL line."""
from __future__ import annotations

import json
import time

from conftest import ACCEPTANCE_LINES
from kvclaims import telemetry as tm
from kvclaims.arbiter import ConflictAction
from kvclaims.conformance import check_L6, run_suite
from kvclaims.fixtures import canonical_config, materialization_profiles, predicate_fixture
from kvclaims.runtime import run_scenario
from kvclaims.sweep import capacity_sweep
from test_properties import PROPERTIES

# Transcribed from the source's refusal event literal.
PAPER_REFUSAL = (
    '{"event": "active_request_refused", "request_id": "active", '
    '"blocking_claim_ids": ["claim:resident"], "protected_resident_blocks": 60, '
    '"active_live_blocks_required": 70, "resident_plus_active_blocks": 130, '
    '"usable_blocks": 80, "capacity_shortfall_blocks": 50, '
    '"feasibility": "infeasible_preserve_resident_and_active"}'
)


def record(n: int, ok: bool, detail: str) -> None:
    line = f"[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    result = fn(*args, **kwargs)
    return result, time.perf_counter() - t0


def test_criterion_1_native_probe():
    out, elapsed = timed(run_scenario, canonical_config("native"))
    left = out.materialization["claim:resident"].surviving_blocks
    ok = out.served_requests == ["active"] and out.evicted_blocks == 50 and left == 10 and elapsed < 1
    record(1, ok, f"served={out.served_requests} evicted={out.evicted_blocks} resident_cached={left} "
                  f"in {elapsed:.3f}s (want served, 50, 10, <1s)")


def test_criterion_2_refusal_event():
    out, elapsed = timed(run_scenario, canonical_config("hard_claim"))
    lines = [line for line in out.trace.splitlines() if json.loads(line)["event"] == tm.ACTIVE_REFUSED]
    fields = {k: v for k, v in json.loads(lines[0]).items() if k != "step"} if len(lines) == 1 else {}
    emitted = json.dumps(fields)
    ok = out.refused_requests == ["active"] and emitted == PAPER_REFUSAL and elapsed < 1
    record(2, ok, f"refused={out.refused_requests} byte_match={emitted == PAPER_REFUSAL} in {elapsed:.3f}s")


def test_criterion_3_chunked_trajectory():
    out = run_scenario(canonical_config("chunked"))
    traj = out.live_trajectories["chunked"]
    record(3, traj == [20, 40, 60, 70], f"trajectory={'/'.join(map(str, traj))} (want 20/40/60/70)")


def test_criterion_4_materialization_divergence():
    rows = materialization_profiles()["profiles"]
    want = {
        "native": ([0, 0, 0], 0),
        "naive_fair_share": ([480, 320, 304], 0),
        "complete_prefix_fair_share": ([640, 640, 0], 18),
        "value_density": ([640, 640, 0], 18),
        "salted": ([0, 0, 0], 0),
    }
    got = {k: (rows[k]["cached_tokens"], rows[k]["thresholded_value"]) for k in want}
    detail = "; ".join(f"{k}={'/'.join(map(str, t))} v={v:g}" for k, (t, v) in got.items())
    record(4, got == want, detail)


def test_criterion_5_no_admit_separation():
    admitted = run_scenario(canonical_config("native"))
    denied = run_scenario(canonical_config("no_admit"))
    reuse = (admitted.reusable_tokens["active"], denied.reusable_tokens["active"])
    victims = (admitted.evicted_blocks, denied.evicted_blocks)
    ok = reuse == (1120, 0) and victims == (50, 50)
    record(5, ok, f"repeat reuse admit/no-admit={reuse[0]}/{reuse[1]} tokens, victims={victims[0]}/{victims[1]}")


def test_criterion_6_capacity_sweep():
    matrix, elapsed = timed(capacity_sweep, 60, 70, range(75, 136))
    excl = ConflictAction.RESIDENT_VICTIM_EXCLUSION.value
    native = ConflictAction.NATIVE_EVICTION.value
    ok = elapsed < 5
    for u in range(75, 136):
        e, n = matrix.cell(excl, u), matrix.cell(native, u)
        ok &= e.resident_preserved and e.active_served == (u >= 130) and e.refusal == (u < 130)
        ok &= n.active_served and n.resident_preserved == (u >= 130)
    flip = matrix.coexistence_point(excl)
    record(6, ok and flip == 130, f"exclusion flips at usable={flip}, native loses resident below "
                                  f"{matrix.coexistence_point(native)}, sweep {elapsed:.2f}s (<5s)")


def test_criterion_7_conformance_suite(tmp_path):
    report = run_suite(regenerate_into=tmp_path)
    ev = {v.check_id: v.evidence for v in report.verdicts}
    counts_ok = (
        ev["L1"]["victims"] == 50
        and ev["L2"]["victims"] == 50
        and (ev["L3"]["resident_plus_active"], ev["L3"]["usable"], ev["L3"]["shortfall"]) == (130, 80, 50)
        and ev["L3"]["blocking"] == ["claim:resident"]
        and ev["L4"]["losses"] == ev["L5"]["losses"] == 50
        and ev["C1"]["hard_protected"] == "unsound"
    )
    record(7, report.pass_count == 8 and counts_ok,
           f"{report.pass_count}/8 verdicts, evidence counts match={counts_ok}")


def test_criterion_8_property_suite():
    failures = []
    t0 = time.perf_counter()
    for name, prop in PROPERTIES.items():
        try:
            prop()
        except Exception as exc:  # report every property, not just the first failure
            failures.append(f"{name}: {type(exc).__name__}")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60
    record(8, ok, f"{len(PROPERTIES) - len(failures)}/{len(PROPERTIES)} properties x1000 cases "
                  f"in {elapsed:.1f}s (<60s){' ' + ', '.join(failures) if failures else ''}")


def test_criterion_9_l6_fixture(canonical_fixtures):
    on_disk = json.loads((canonical_fixtures / "L6_materialization_predicate.json").read_text())
    v = check_L6(on_disk)
    ev = v.evidence
    ok = (
        on_disk == predicate_fixture()
        and 0 not in on_disk["survived_positions"]
        and (ev["surviving"], ev["leading"], ev["required"], ev["satisfied"]) == (59, 0, 60, False)
        and v.passed
    )
    record(9, ok, f"surviving={ev['surviving']} leading={ev['leading']} required={ev['required']} "
                  f"satisfied={ev['satisfied']}")
