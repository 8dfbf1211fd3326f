"""
Retained tokens are not retained value
======================================

Three spans compete for a fixed block budget. A prefix is only worth
anything once its whole leading range survives, so keeping many blocks
can still be worth nothing.
"""

# %%
from kvclaims.fixtures import PROFILE_SPANS, materialization_profiles
from kvclaims.materialization import RETENTION_STRATEGIES, evaluate_profile, thresholded_value

for name, pred in PROFILE_SPANS.items():
    print(name, pred.span_total_blocks, "blocks, value", pred.span_value)

# %%
# Replaying the recorded survival profiles.
rows = materialization_profiles()["profiles"]
for policy, row in rows.items():
    print(f"{policy:28s} tokens={row['cached_tokens']} value={row['thresholded_value']:g}")

# %%
# The recorded rows do not share one budget (the naive row holds 69 blocks,
# the complete-prefix rows 80). Running the live strategies at 80 blocks
# shows the same split: spreading the budget keeps tokens and loses value.
for name, strategy in RETENTION_STRATEGIES.items():
    results = evaluate_profile(PROFILE_SPANS, strategy(PROFILE_SPANS, 80))
    tokens = [r.cached_tokens for r in results.values()]
    print(f"{name:28s} tokens={tokens} value={thresholded_value(results.values()):g}")
