"""Login CSRF on a conference manager.

The vulnerable login sets the session cookie without checking where the
request came from.  We type-check it, then let the bounded explorer find the
attack, and finally replay the witness to confirm it.
"""

from websess.calculus import load_world
from websess.cli import resolve_world_path
from websess.engine import TraceFormatter
from websess.harness import ExplorationBounds, check_session_integrity, replay
from websess.typechecker import type_cluster

world = load_world(resolve_world_path("hotcrp_vuln"))

# 1. the type checker blames the reply that sets the cookie
verdict = type_cluster(world)
for r in verdict.rejections():
    print(f"{r.endpoint} [{r.branch}] line {r.line}: {r.rule}  {r.message}")

# 2. the explorer looks for a trace whose auth events leave the honest ones
v = check_session_integrity(world, ExplorationBounds(depth=60))
fmt = TraceFormatter(world)
print()
print("status   ", v.status, f"({v.states} states)")
print("honest   ", [fmt.event(e) for e in v.honest_projection])
print("attacked ", [fmt.event(e) for e in v.attacked_projection])

# the interesting part of the witness is what the attacker sends
for k, s in enumerate(v.witness, 1):
    if s.move is not None:
        print(f"  step {k:2}  {s.rule:10} {fmt.event(s.events[0])}")

# 3. the witness is a real execution
assert replay(world, v.witness) == v.trace()
print("\nwitness replays:", len(v.witness), "steps")
