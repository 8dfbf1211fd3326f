"""
Where resident and active state can coexist
===========================================

Sweep usable capacity from 75 to 135 blocks for a 60-block resident
claim and a 70-block active request, under every conflict policy.
"""

# %%
from kvclaims.report import render_sweep
from kvclaims.sweep import capacity_sweep

matrix = capacity_sweep(60, 70, range(75, 136))
print(render_sweep(matrix, columns=[75, 80, 100, 125, 129, 130, 135]))

# %%
# Every policy reaches coexistence at the same point; they differ only in
# what they give up below it.
for policy in matrix.policies:
    cell = matrix.cell(policy, 100)
    print(f"{policy:28s} from {matrix.coexistence_point(policy)}  at 100: "
          f"served={cell.active_served} preserved={cell.resident_preserved}")
