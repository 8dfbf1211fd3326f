"""
Checking a runtime against the claim contract
=============================================

Generate the canonical traces from the simulator, then run the trace
checks and the capability classification over them.
"""

# %%
import tempfile

from kvclaims.conformance import CapabilityProfile, classification_table, run_suite

with tempfile.TemporaryDirectory() as tmp:
    report = run_suite(regenerate_into=tmp)
print(report.summary())

# %%
# How each protection mode lowers onto a few backend capability sets.
profiles = [
    CapabilityProfile("soft_only", {"soft_priority"}),
    CapabilityProfile("pin_only", {"pin_exclusion"}),
    CapabilityProfile("pin_with_events", {"pin_exclusion", "claim_lifecycle_events", "refusal_attribution"}),
]
for backend, row in classification_table(profiles).items():
    print(backend, row)
