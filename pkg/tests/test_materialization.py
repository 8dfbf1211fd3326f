from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvclaims.claims import CacheIdentity
from kvclaims.errors import PositionOutOfRange
from kvclaims.fixtures import PROFILE_SPANS, materialization_profiles
from kvclaims.materialization import (
    LEDGER_CHECKS,
    RETENTION_STRATEGIES,
    MaterializationPredicate,
    ReuseReport,
    evaluate,
    evaluate_profile,
    first_missing,
    leading_profile,
    ledger_check,
    naive_fair_share,
    thresholded_value,
)
from kvclaims.pool import BlockPool


def brute_leading(positions: set[int]) -> int:
    """Length of the contiguous run starting at 0, by direct scan."""
    run = 0
    for p in range(max(positions, default=-1) + 2):
        if p not in positions:
            return run
        run += 1
    return run


class TestEvaluate:
    def test_position_zero_missing(self):
        r = evaluate(MaterializationPredicate(60, 60), range(1, 60))
        assert (r.surviving_blocks, r.leading_blocks, r.satisfied) == (59, 0, False)
        assert r.cached_tokens == 0

    def test_full_leading_prefix(self):
        r = evaluate(MaterializationPredicate(40, 40, 9.0), range(40))
        assert r.satisfied and r.granted_value == 9.0
        assert r.cached_tokens == 640

    def test_empty(self):
        r = evaluate(MaterializationPredicate(1, 4), [])
        assert (r.leading_blocks, r.cached_tokens, r.satisfied) == (0, 0, False)

    def test_out_of_range(self):
        with pytest.raises(PositionOutOfRange):
            evaluate(MaterializationPredicate(2, 4), [4])

    def test_block_size_scales_tokens(self):
        assert evaluate(MaterializationPredicate(1, 4), [0, 1], block_size=32).cached_tokens == 64

    def test_predicate_validation(self):
        with pytest.raises(ValueError):
            MaterializationPredicate(5, 4)
        with pytest.raises(ValueError):
            MaterializationPredicate(1, 1, kind="any_block")
        with pytest.raises(ValueError):
            MaterializationPredicate(1, 1, span_value=-1)

    @settings(max_examples=500)
    @given(st.sets(st.integers(0, 29)), st.integers(1, 30))
    def test_result_invariants(self, positions, required):
        pred = MaterializationPredicate(required, 30, 2.5)
        r = evaluate(pred, positions)
        assert r.leading_blocks == r.first_missing_block == brute_leading(positions)
        assert r.cached_tokens == r.first_missing_block * 16
        assert r.satisfied == (r.leading_blocks >= required)
        assert r.granted_value == (2.5 if r.satisfied else 0.0)
        assert evaluate(pred, positions) == r

    @settings(max_examples=500)
    @given(st.sets(st.integers(0, 29)), st.integers(0, 29), st.integers(1, 30))
    def test_adding_a_survivor_is_monotone(self, positions, extra, required):
        pred = MaterializationPredicate(required, 30, 1.0)
        before = evaluate(pred, positions)
        after = evaluate(pred, positions | {extra})
        assert after.leading_blocks >= before.leading_blocks
        assert after.granted_value >= before.granted_value


class TestThresholdedValue:
    def replay(self, leading):
        return evaluate_profile(PROFILE_SPANS, leading_profile(leading, list(PROFILE_SPANS)))

    def test_naive_fair_share_profile(self):
        results = self.replay((30, 20, 19))
        assert [r.cached_tokens for r in results.values()] == [480, 320, 304]
        assert thresholded_value(results.values()) == 0

    def test_complete_prefix_profile(self):
        results = self.replay((40, 40, 0))
        assert [r.cached_tokens for r in results.values()] == [640, 640, 0]
        assert thresholded_value(results.values()) == 18

    def test_empty(self):
        assert thresholded_value([]) == 0

    def test_value_count_divergence(self):
        naive = self.replay((30, 20, 19))
        complete = self.replay((40, 40, 0))
        naive_blocks = sum(r.surviving_blocks for r in naive.values())
        complete_blocks = sum(r.surviving_blocks for r in complete.values())
        assert naive_blocks > 0 and thresholded_value(naive.values()) == 0
        assert complete_blocks < sum(p.span_total_blocks for p in PROFILE_SPANS.values())
        assert thresholded_value(complete.values()) > thresholded_value(naive.values())


class TestProfilesFixture:
    def test_rows(self):
        doc = materialization_profiles()["profiles"]
        assert doc["naive_fair_share"]["cached_tokens"] == [480, 320, 304]
        assert doc["complete_prefix_fair_share"]["thresholded_value"] == 18
        assert doc["value_density"]["cached_tokens"] == [640, 640, 0]
        for row in ("native", "salted"):
            assert doc[row]["cached_tokens"] == [0, 0, 0]
            assert doc[row]["thresholded_value"] == 0


class TestLedger:
    def healthy(self):
        pool = BlockPool(64)
        pool.cache_resident("doc", 40)
        return pool

    def test_healthy_prefix_passes_all(self):
        pool = self.healthy()
        v = ledger_check("doc", pool, MaterializationPredicate(40, 40))
        assert v.passed and set(v.checks) == set(LEDGER_CHECKS)
        assert v.result.satisfied and v.result.cached_tokens == 640

    def test_salted_identity_is_not_reusable_unsalted(self):
        pool = BlockPool(64)
        pool.cache_resident("doc", 40, identity=CacheIdentity(namespace_salt="tenant"))
        v = ledger_check("doc", pool, MaterializationPredicate(40, 40))
        assert v.checks["salted_zero_survival"]
        assert pool.lookup_leading("doc", CacheIdentity()) == 0

    def test_double_counted_evicted_block(self):
        pool = self.healthy()
        pool.allocate_active("r", 25)  # 24 free, one resident block evicted
        assert pool.cached_positions("doc") == list(range(1, 40))
        fake = ReuseReport(frozenset(range(40)), 640)
        v = ledger_check("doc", pool, MaterializationPredicate(40, 40), fake)
        assert not v.checks["evicted_not_counted"]
        assert v.checks["cached_tokens_match_first_missing"]

    def test_inflated_token_count(self):
        pool = self.healthy()
        fake = ReuseReport(frozenset(range(40)), 656)
        v = ledger_check("doc", pool, MaterializationPredicate(40, 40), fake)
        assert v.failures() == ["cached_tokens_match_first_missing", "survivors_form_leading_range"]

    def test_non_leading_survivors_claimed_as_tokens(self):
        pool = self.healthy()
        pool.allocate_active("r", 25)
        fake = ReuseReport(frozenset(range(1, 40)), 39 * 16)
        v = ledger_check("doc", pool, MaterializationPredicate(40, 40), fake)
        assert not v.checks["survivors_form_leading_range"]


class TestRetentionStrategies:
    def test_all_strategies_respect_budget_and_spans(self):
        for name, strategy in RETENTION_STRATEGIES.items():
            profile = strategy(PROFILE_SPANS, 69)
            assert sum(len(v) for v in profile.values()) <= 69, name
            for span, kept in profile.items():
                assert kept <= set(range(PROFILE_SPANS[span].span_total_blocks)), name

    def test_naive_split_is_proportional(self):
        profile = naive_fair_share(PROFILE_SPANS, 50)
        assert [len(profile[n]) for n in "ABC"] == [20, 20, 10]

    def test_value_density_keeps_whole_spans(self):
        profile = RETENTION_STRATEGIES["value_density"](PROFILE_SPANS, 80)
        values = evaluate_profile(PROFILE_SPANS, profile)
        assert thresholded_value(values.values()) == 18


def test_first_missing():
    assert first_missing([]) == 0
    assert first_missing([0, 1, 3]) == 2
    assert first_missing(range(5)) == 5
