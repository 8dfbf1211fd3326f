"""
Protecting a resident prefix under active pressure
==================================================

A 60-block resident prefix sits in an 80-block pool when a 70-block
active request arrives. The two cannot coexist, so some policy has to
choose what gives way.
"""

# %%
# Native eviction serves the request by taking 50 resident blocks.
from kvclaims.fixtures import canonical_config
from kvclaims.runtime import run_scenario

native = run_scenario(canonical_config("native"))
print("served:", native.served_requests, "evicted:", native.evicted_blocks)
print("resident blocks left:", native.materialization["claim:resident"].surviving_blocks)

# %%
# Under hard exclusion the same request is refused, and the refusal names
# the claim that blocked it along with the capacity arithmetic.
hard = run_scenario(canonical_config("hard_claim"))
for line in hard.trace.splitlines():
    if '"active_request_refused"' in line:
        print(line)

# %%
# The check itself is one inequality: protected + active <= usable.
from kvclaims.arbiter import check_feasibility

for usable in (80, 129, 130):
    r = check_feasibility(60, 70, usable)
    print(usable, r.feasibility, "shortfall", r.shortfall_blocks)
