"""A database admin tool that reads parameters from GET as well as POST.

The GET variants skip the CSRF token check.  The checker blames the dangerous
endpoint, and the explorer turns that into a concrete forged request.
"""

from websess.calculus import load_world
from websess.cli import resolve_world_path
from websess.engine import TraceFormatter
from websess.harness import check_session_integrity
from websess.typechecker import type_cluster

for name in ("phpmyadmin_vuln", "phpmyadmin_fixed"):
    world = load_world(resolve_world_path(name))
    tc = type_cluster(world)
    print(name, "accepted" if tc.ok else "rejected")
    for r in tc.rejections():
        print(f"  {r.endpoint} [{r.branch}] {r.rule}")
    v = check_session_integrity(world)
    print(" ", v.status)
    if v.violation:
        print("  diverging:", TraceFormatter(world).event(v.diverging))
