from __future__ import annotations

import json
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvclaims import telemetry as tm
from kvclaims.claims import ProtectionMode
from kvclaims.conformance import (
    FIXTURE_FILES,
    PRIMITIVES,
    CapabilityProfile,
    ConformanceClass,
    check_C1,
    check_L1,
    check_L2,
    check_L3,
    check_L4,
    check_L5,
    check_L6,
    check_L7,
    classification_table,
    classify_capability,
    reconstruct,
    run_suite,
)
from kvclaims.errors import MissingFixture
from kvclaims.fixtures import canonical_config, predicate_fixture
from kvclaims.runtime import run_scenario
from kvclaims.telemetry import ClaimEvent, read_trace, write_trace


def trace_of(kind: str) -> list[ClaimEvent]:
    return list(run_scenario(canonical_config(kind)).events)


class TestL1:
    def test_native_trace_passes(self):
        v = check_L1(trace_of("native"))
        assert v.passed
        assert (v.evidence["victims"], v.evidence["accepted"], v.evidence["harmed"]) == (50, 0, 0)

    def test_injected_harm_fails(self):
        trace = trace_of("native")
        trace.append(ClaimEvent(tm.CLAIM_HARMED, claim_id="claim:resident", step=trace[-1].step))
        v = check_L1(trace)
        assert not v.passed and v.evidence["harm_without_acceptance"][0]["claim_id"] == "claim:resident"

    def test_harm_after_acceptance_is_fine(self):
        trace = [
            ClaimEvent(tm.CLAIM_ACCEPTED, claim_id="c", step=0),
            ClaimEvent(tm.CLAIM_HARMED, claim_id="c", step=1),
        ]
        assert check_L1(trace).passed


class TestL2:
    def test_no_admit_trace(self):
        v = check_L2(trace_of("no_admit"))
        assert v.passed and v.evidence["victims"] == 50 and v.evidence["served"]

    def test_not_applicable_is_fail(self):
        v = check_L2(trace_of("native"))
        assert not v.passed and v.message.startswith("not applicable")

    def test_denial_without_victims(self):
        trace = [e for e in trace_of("no_admit") if e.event != tm.BLOCK_EVICTED]
        assert not check_L2(trace).passed


class TestL3:
    def test_hard_claim_trace(self):
        v = check_L3(trace_of("hard_claim"))
        assert v.passed
        ev = v.evidence
        assert (ev["resident_plus_active"], ev["usable"], ev["shortfall"]) == (130, 80, 50)
        assert ev["blocking"] == ["claim:resident"]

    def test_missing_blocking_ids_fails(self):
        trace = trace_of("hard_claim")
        i = next(i for i, e in enumerate(trace) if e.event == tm.ACTIVE_REFUSED)
        trace[i] = replace(trace[i], blocking_claim_ids=[])
        v = check_L3(trace)
        assert not v.passed and "no blocking_claim_ids" in v.message

    def test_wrong_shortfall_fails(self):
        trace = trace_of("hard_claim")
        i = next(i for i, e in enumerate(trace) if e.event == tm.ACTIVE_REFUSED)
        trace[i] = replace(trace[i], capacity_shortfall_blocks=49)
        assert not check_L3(trace).passed

    def test_silent_loss_of_hard_claim_fails(self):
        trace = trace_of("hard_claim")
        trace.append(ClaimEvent(tm.BLOCK_EVICTED, claim_id="claim:resident", step=trace[-1].step))
        v = check_L3(trace)
        assert not v.passed and "without release or harm" in v.message

    def test_no_refusal_passes_vacuously(self):
        v = check_L3(trace_of("native"))
        assert v.passed and v.evidence["refusals"] == 0


class TestL4L5:
    def test_demotion(self):
        v = check_L4(trace_of("demotion"))
        assert v.passed and (v.evidence["losses"], v.evidence["harmed"]) == (50, 0)

    def test_expiry(self):
        v = check_L5(trace_of("expiry"))
        assert v.passed and (v.evidence["losses"], v.evidence["harmed"]) == (50, 0)

    def test_loss_before_release_fails(self):
        trace = trace_of("demotion")
        i = next(i for i, e in enumerate(trace) if e.event == tm.CLAIM_DEMOTED)
        early = ClaimEvent(tm.BLOCK_LOSS_AFTER_RELEASE, claim_id="claim:resident", step=trace[i].step)
        trace.insert(i, early)
        v = check_L4(trace)
        assert not v.passed and "precedes its release" in v.message

    def test_wrong_release_kind_not_applicable(self):
        assert not check_L5(trace_of("demotion")).passed
        assert not check_L4(trace_of("expiry")).passed


class TestL6:
    def test_fixture_triggers(self):
        v = check_L6(predicate_fixture())
        assert v.passed
        assert (v.evidence["surviving"], v.evidence["leading"], v.evidence["required"]) == (59, 0, 60)

    def test_full_survival_not_triggered(self):
        fixture = predicate_fixture()
        fixture["survived_positions"] = list(range(60))
        v = check_L6(fixture)
        assert not v.passed and "not triggered" in v.message

    def test_nothing_survived_not_triggered(self):
        fixture = predicate_fixture()
        fixture["survived_positions"] = []
        assert not check_L6(fixture).passed


class TestL7:
    def test_hard_claim_reconstruction(self):
        v = check_L7(trace_of("hard_claim"))
        assert v.passed
        assert v.evidence["claims"] == {"claim:resident": "materialized"}
        assert v.evidence["requests"] == {"active": "refused"}
        assert v.evidence["blocking"] == {"active": ["claim:resident"]}

    def test_spliced_illegal_transition(self):
        trace = trace_of("demotion")
        trace.append(ClaimEvent(tm.CLAIM_ACCEPTED, claim_id="claim:resident", step=trace[-1].step))
        v = check_L7(trace)
        assert not v.passed and "illegal transition" in v.message

    def test_refusal_naming_released_claim(self):
        trace = trace_of("demotion")
        trace.append(
            ClaimEvent(tm.ACTIVE_REFUSED, request_id="late", blocking_claim_ids=["claim:resident"], step=trace[-1].step)
        )
        assert not check_L7(trace).passed

    def test_disjoint_traces_concatenate(self):
        a = trace_of("hard_claim")
        b = []
        for e in trace_of("native"):
            renamed = replace(e, step=e.step + a[-1].step)
            if renamed.request_id:
                renamed.request_id = "other:" + renamed.request_id
            b.append(renamed)
        rec = reconstruct(a + b)
        assert rec.ok
        assert rec.requests == {"active": "refused", "other:active": "served"}

    def test_unknown_events_are_ignored(self):
        trace = trace_of("hard_claim")
        trace.insert(1, ClaimEvent("vendor_probe", step=0))
        assert check_L7(trace).passed

    def test_live_scheduler_warns_without_failing(self, canonical_fixtures):
        live = read_trace(canonical_fixtures / "live_scheduler_pressure.jsonl")
        rec = reconstruct(live)
        assert rec.ok
        assert any("shortfall 19 != 18" in w for w in rec.warnings)


class TestC1:
    # Completed matrix; only two cells are fixed by the source, the rest follow the obligation rule.
    PINNED = {
        "none": ["unsound", "unsound", "unsound", "unsound", "unsound", "adapter_required"],
        "soft": ["approximate", "unsound", "unsound", "unsound", "unsound", "adapter_required"],
        "pin": ["adapter_required"] * 6,
        "pin+events": ["adapter_required", "native", "native", "native", "adapter_required", "native"],
        "all": ["approximate", "native", "native", "native", "native", "native"],
    }
    PROFILES = {
        "none": set(),
        "soft": {"soft_priority"},
        "pin": {"pin_exclusion"},
        "pin+events": {"pin_exclusion", "claim_lifecycle_events", "refusal_attribution"},
        "all": set(PRIMITIVES),
    }

    def test_pinned_table(self):
        profiles = [CapabilityProfile(n, frozenset(s)) for n, s in self.PROFILES.items()]
        table = classification_table(profiles)
        modes = [m.value for m in ProtectionMode]
        assert modes == ["soft_priority", "hard_protected", "demotable", "offloadable", "expiring", "best_effort"]
        for name, row in self.PINNED.items():
            assert [table[name][m] for m in modes] == row, name

    def test_source_cells(self):
        soft = CapabilityProfile("x", frozenset({"soft_priority"}))
        assert classify_capability(soft, "hard_protected") is ConformanceClass.UNSOUND
        assert classify_capability(soft, "soft_priority") is ConformanceClass.APPROXIMATE

    def test_check(self):
        v = check_C1(CapabilityProfile("x", frozenset({"soft_priority"})))
        assert v.passed
        assert not check_C1(CapabilityProfile("y", PRIMITIVES)).passed

    def test_unknown_primitive(self):
        with pytest.raises(ValueError):
            CapabilityProfile("x", frozenset({"magic"}))

    @settings(max_examples=500)
    @given(
        st.sets(st.sampled_from(sorted(PRIMITIVES))),
        st.sets(st.sampled_from(sorted(PRIMITIVES))),
        st.sampled_from(list(ProtectionMode)),
    )
    def test_monotone_in_primitives(self, base, extra, mode):
        small = classify_capability(CapabilityProfile("a", frozenset(base)), mode)
        big = classify_capability(CapabilityProfile("b", frozenset(base | extra)), mode)
        assert big.rank >= small.rank


class TestSuite:
    def test_eight_of_eight(self, tmp_path):
        report = run_suite(regenerate_into=tmp_path)
        assert report.pass_count == 8 and report.passed
        assert [v.check_id for v in report.verdicts] == ["L1", "L2", "L3", "L4", "L5", "L6", "L7", "C1"]
        assert report.verdict("L1").evidence["victims"] == 50
        assert report.verdict("L3").evidence["shortfall"] == 50

    def test_corrupted_l4_fixture(self, canonical_fixtures):
        path = canonical_fixtures / FIXTURE_FILES["L4"]
        trace = read_trace(path)
        i = next(i for i, e in enumerate(trace) if e.event == tm.CLAIM_DEMOTED)
        trace.insert(i, ClaimEvent(tm.BLOCK_LOSS_AFTER_RELEASE, claim_id="claim:resident", step=trace[i].step))
        write_trace(trace, path)
        report = run_suite(canonical_fixtures)
        assert report.pass_count == 7 and not report.verdict("L4").passed

    def test_regeneration_is_byte_identical(self, tmp_path):
        run_suite(regenerate_into=tmp_path / "a")
        run_suite(regenerate_into=tmp_path / "b")
        for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    def test_missing_fixture(self, canonical_fixtures):
        (canonical_fixtures / FIXTURE_FILES["L2"]).unlink()
        with pytest.raises(MissingFixture, match="L2_write_no_admit"):
            run_suite(canonical_fixtures)

    def test_no_fixtures(self):
        with pytest.raises(MissingFixture):
            run_suite()

    def test_report_files(self, canonical_fixtures, tmp_path):
        report = run_suite(canonical_fixtures)
        results, summary = report.write(tmp_path / "out")
        doc = json.loads(results.read_text())
        assert (doc["passed"], doc["total"]) == (8, 8)
        text = summary.read_text()
        assert "8/8 checks passed" in text and "shortfall 19 != 18" in text
