"""What cookie attributes buy you.

Each attribute or prefix changes who may read a cookie (confidentiality) and
who may overwrite it (integrity).  We print the label for each variant and
ask which attackers could overwrite it.
"""

from websess.labels import (
    HOST_PREFIX, SECURE_PREFIX, AttackerSpec, CookieSpec, Universe, attacker_label, isilow, lambda_of,
)

u = Universe(("app", "blog", "evil"), (frozenset({"app", "blog"}),))
variants = {
    "plain": (CookieSpec("app"), set()),
    "Secure": (CookieSpec("app", secure=True), set()),
    "Secure + HSTS": (CookieSpec("app", secure=True), {"app", "blog"}),
    "__Secure-": (CookieSpec("app", prefix=SECURE_PREFIX), set()),
    "__Host-": (CookieSpec("app", prefix=HOST_PREFIX), set()),
}
attackers = {
    "web(evil)": AttackerSpec("web", "evil"),
    "network": AttackerSpec("network"),
    "related(app)": AttackerSpec("related", "app"),
}
labels = {k: attacker_label(s, u) for k, s in attackers.items()}

print(f"{'cookie':15} " + " ".join(f"{k:>13}" for k in attackers))
for name, (spec, hsts) in variants.items():
    lab = lambda_of(spec, u, hsts=hsts)
    row = ["overwrites" if isilow(lab.integ, la) else "-" for la in labels.values()]
    print(f"{name:15} " + " ".join(f"{c:>13}" for c in row))
    print(f"{'':15} {lab}")
