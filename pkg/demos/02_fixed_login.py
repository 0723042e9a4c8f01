"""The same application with a pre-session token on the login form.

This time the type checker accepts every endpoint, even against an attacker
controlling a related domain, and the explorer finds nothing at the same
bound.
"""

from websess.calculus import load_world
from websess.cli import resolve_world_path
from websess.harness import ExplorationBounds, check_session_integrity
from websess.typechecker import render_derivation, type_cluster

world = load_world(resolve_world_path("hotcrp_fixed"))
verdict = type_cluster(world)
for name, ep in verdict.endpoints.items():
    print(f"{name:8} {ep.status}")

# how the csrf branch of manage is discharged
d = verdict.endpoints["manage"].derivation
print("\n".join(render_derivation(d).splitlines()[-4:]))

v = check_session_integrity(world, ExplorationBounds(depth=60))
print(f"\n{v.status}: {v.states} states, {v.elapsed:.1f}s")
