"""Hypothesis strategies shared by the property and acceptance tests."""
from __future__ import annotations

from hypothesis import strategies as st

from kvclaims.arbiter import ConflictAction
from kvclaims.claims import ProtectionMode
from kvclaims.runtime import ClaimDecl, RequestDecl, ScenarioConfig

modes = st.sampled_from(list(ProtectionMode))
policies = st.sampled_from(list(ConflictAction))


@st.composite
def scenario_configs(draw, max_usable: int = 24) -> ScenarioConfig:
    """Small random scenarios: a few claims and requests over a tiny pool."""
    usable = draw(st.integers(2, max_usable))
    n_claims = draw(st.integers(0, 3))
    claims = []
    for i in range(n_claims):
        span = draw(st.integers(1, usable))
        mode = draw(modes)
        duration = draw(st.one_of(st.none(), st.integers(1, 4)))
        claims.append(
            ClaimDecl(
                claim_id=f"claim:{i}",
                object_id=f"obj{i}",
                span_blocks=span,
                required_leading_blocks=draw(st.integers(1, span)),
                protection_mode=mode,
                duration_steps=duration,
                submit_step=draw(st.integers(0, 2)),
            )
        )
    n_requests = draw(st.integers(0, 3))
    requests = []
    for i in range(n_requests):
        sched = tuple(draw(st.lists(st.integers(1, max(1, usable // 2)), min_size=1, max_size=3)))
        requests.append(
            RequestDecl(
                request_id=f"req{i}",
                chunk_schedule=sched,
                write_admit=draw(st.booleans()),
                arrival_step=draw(st.integers(0, 4)),
                # Some requests repeat a claimed prefix object.
                object_id=draw(st.one_of(st.none(), st.sampled_from([f"obj{j}" for j in range(3)]))),
            )
        )
    policy = draw(policies)
    relax = ()
    if policy in (ConflictAction.RELAX_DEMOTE, ConflictAction.RELAX_EXPIRE) and claims and draw(st.booleans()):
        relax = (claims[0].claim_id,)
    return ScenarioConfig(
        usable_blocks=usable,
        claims=tuple(claims),
        requests=tuple(requests),
        policy=policy,
        defer_budget=draw(st.integers(0, 2)),
        relax_claims=relax,
        name="generated",
    )
