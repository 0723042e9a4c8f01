"""One check per headline criterion.  Each prints a PASS/FAIL line, collected
again in the terminal summary."""

import time
from pathlib import Path

import test_properties
from conftest import ACCEPTANCE, corpus_world
from oracles import label_equal
from websess import oracle
from websess.calculus import parse_world
from websess.cli import build_parser, config_from_args, corpus_dir, corpus_manifest, corpus_names, run
from websess.engine import Engine
from websess.envcfg import check_wellformed_env
from websess.harness import NO_VIOLATION, VIOLATION
from websess.labels import (
    HOST_PREFIX, SECURE_PREFIX, URL, CookieSpec, Join, Label, Meet, Universe, http, https, lambda_of,
)
from websess.typechecker import CSRF, HON, type_cluster


def report(n, title, check):
    try:
        detail = check()
    except Exception as e:  # noqa: BLE001
        line = f"FAIL [{n}] {title}: {type(e).__name__}: {e}"
        print(line)
        ACCEPTANCE.append(line)
        raise
    line = f"PASS [{n}] {title}" + (f" ({detail})" if detail else "")
    print(line)
    ACCEPTANCE.append(line)


def blame(verdict):
    return [(r.endpoint, r.branch, r.rule) for r in verdict.rejections()]


def test_corpus_verdict_matrix():
    def check():
        t0 = time.perf_counter()
        verdicts = {n: type_cluster(corpus_world(n)) for n in corpus_names()}
        took = time.perf_counter() - t0
        manifest = corpus_manifest()["worlds"]
        for n, v in verdicts.items():
            want = manifest[n]["check"]
            assert v.ok == (want["status"] == "accepted"), n
            assert blame(v) == [(b["endpoint"], b["branch"], b["rule"]) for b in want["blame"]], n
        ok = {n for n, v in verdicts.items() if v.ok}
        assert ok == {"hotcrp_fixed", "hotcrp_ivc", "moodle_fixed", "phpmyadmin_fixed"}
        # hotcrp: csrf blame at the reply that sets sid
        src = (Path(str(corpus_dir())) / "hotcrp_vuln.ws").read_text().splitlines()
        csrf = [r for r in verdicts["hotcrp_vuln"].rejections() if r.branch == CSRF]
        assert [r.rule for r in csrf] == ["T-Reply"] and "sid -> x" in src[csrf[0].line - 1]
        assert corpus_world("hotcrp_fixed").attacker.kind == "related"
        assert corpus_world("moodle_fixed").attacker.kind == "web"
        assert ("login", HON, "T-Login") in blame(verdicts["moodle_vuln"])
        assert ("drop", CSRF, "T-Auth") in blame(verdicts["phpmyadmin_vuln"])
        assert took < 5, took
        return f"{len(verdicts)} worlds in {took:.2f}s"
    report(1, "corpus verdict matrix", check)


def _attack(name):
    code, rep, _ = run(config_from_args(build_parser().parse_args(["attack", name, "--depth", "60"])))
    return code, rep


def test_attack_reproduction():
    def check():
        t0 = time.perf_counter()
        code, rep = _attack("hotcrp_vuln")
        took = time.perf_counter() - t0
        assert rep["status"] == VIOLATION and code == 1
        assert rep["diverging"] == 'auth<"paper", "submit">@(usr, atk) lC'
        assert took < 60, took
        code, rep = _attack("hotcrp_fixed")
        assert rep["status"] == NO_VIOLATION and code == 0
        return f"violation in {took:.1f}s; fixed world clean at depth 60"
    report(2, "attack reproduction", check)


def size(t):
    return 1 + size(t.left) + size(t.right) if isinstance(t, (Join, Meet)) else 1


def test_lattice_oracle():
    def check():
        t0 = time.perf_counter()
        terms, bad = oracle.compare(("d1", "d2"), 5)
        took = time.perf_counter() - t0
        assert max(size(t) for t in terms) == 5
        assert bad == [], bad[:3]
        assert took < 30, took
        return f"{len(terms)} terms, {len(terms) ** 2} pairs, {took:.1f}s"
    report(3, "lattice oracle equivalence", check)


# cookie-label displays, written out term by term
U3 = Universe(("dC", "dE", "dX"), (frozenset({"dC", "dE"}),))
SUB = Universe(("a", "s"), (frozenset({"a", "s"}),), subdomain_pairs=frozenset({("s", "a")}))
ANY_C = Meet(Meet(http("dC"), https("dC")), Meet(http("dE"), https("dE")))


def both(d):
    return Meet(http(d), https(d))


TABLE = [
    ("plain", CookieSpec("dC"), U3, set(), Label(both("dC"), ANY_C)),
    ("Secure", CookieSpec("dC", secure=True), U3, set(), Label(https("dC"), ANY_C)),
    ("Domain", CookieSpec("a", domain_attribute="a"), SUB, set(),
     Label(Meet(both("a"), both("s")), Meet(both("a"), both("s")))),
    ("__Secure-", CookieSpec("dC", prefix=SECURE_PREFIX), U3, set(), Label(https("dC"), Meet(https("dC"), https("dE")))),
    ("__Host-", CookieSpec("dC", prefix=HOST_PREFIX), U3, set(), Label(https("dC"), https("dC"))),
    ("Secure+HSTS(dC)", CookieSpec("dC", secure=True), U3, {"dC"},
     Label(https("dC"), Meet(http("dE"), Meet(https("dC"), https("dE"))))),
    ("Secure+HSTS(dE)", CookieSpec("dC", secure=True), U3, {"dE"},
     Label(https("dC"), Meet(http("dC"), Meet(https("dC"), https("dE"))))),
    ("Secure+HSTS(all)", CookieSpec("dC", secure=True), U3, {"dC", "dE"},
     Label(https("dC"), Meet(https("dC"), https("dE")))),
    ("URL", URL("http", "dX"), U3, set(), Label(http("dX"), http("dX"))),
]


def test_label_model_table():
    def check():
        wrong = [row[0] for row in TABLE if not label_equal(lambda_of(row[1], row[2], hsts=row[3]), row[4])]
        assert wrong == [], wrong
        return f"{len(TABLE)} rows"
    report(4, "label-model table", check)


def test_wellformedness():
    def check():
        text = (Path(str(corpus_dir())) / "hotcrp_ivc.ws").read_text()
        w = parse_world(text)
        assert check_wellformed_env(w.env, w).violations == []
        old = "cookie sid : cred lC on dC attrs {host-prefix};"
        assert old in text
        # high-confidentiality credential in a cookie plain http can write
        bad = parse_world(text.replace(old, "cookie sid : cred lHL on dC attrs {secure};"))
        got = check_wellformed_env(bad.env, bad)
        assert len(got.violations) == 1 and got.conditions() == ["2c"], got.conditions()
        return "clean; mutation trips 2c only"
    report(5, "environment well-formedness", check)


def test_property_suites():
    def check():
        # suites already run in this session count; the rest run now
        for name, fn in test_properties.SUITES.items():
            if test_properties.COUNTS[name] < test_properties.N:
                fn()
        short = {k: test_properties.COUNTS[k] for k in test_properties.SUITES
                 if test_properties.COUNTS[k] < test_properties.N}
        assert short == {}, short
        return ", ".join(f"{k}={test_properties.COUNTS[k]}" for k in test_properties.SUITES)
    report(6, "property suites", check)


def test_runtime_monitor():
    def check():
        accepted = [n for n in corpus_names() if type_cluster(corpus_world(n)).ok]
        for n in accepted:
            run_ = Engine(corpus_world(n), monitor=True).run_honest()
            assert run_.monitor == [], (n, run_.monitor[:1])
            assert run_.errors() == 0 and run_.terminated_regularly(), n
        return f"{len(accepted)} accepted worlds quiet"
    report(7, "runtime monitor", check)
