from dataclasses import replace

import pytest

from conftest import corpus_world
from oracles import rename
from websess.calculus import parse_world
from websess.calculus.syntax import Identity, Include, Name, Prim, Val, free_names
from websess.engine import AtkRequest, AtkResponse, AuthEvt, Engine, TraceFormatter, run_honest
from websess.harness import (
    EXHAUSTED, NO_VIOLATION, VIOLATION, Canon, ExplorationBounds, canonicalize, check_session_integrity,
    check_trace, default_pool, is_prefix, project, relevant_labels, replay, synthesize_messages,
)
from websess.labels import I, Label, attacker_label, https, isilow

LC = Label(https("dC"), https("dC"))

INTERCEPT = """
domains {d};
url a = http://d/a;
attacker network;
urltype a : (low, [], TOP);
cookie c : low on d;
server s {
  listen(a)[c]() {
    if @glob c = UNDEF then {
      @glob c := fresh(low);
      reply({}) {skip} {c -> x} with x = @glob c
    } else { reply({}) {skip} {} }
  }
}
user { load(1, a, {}); load(1, a, {}) }
"""


@pytest.fixture(scope="module")
def vuln_verdict():
    return check_session_integrity(corpus_world("hotcrp_vuln"), ExplorationBounds(depth=60))


def fmt(world, events):
    f = TraceFormatter(world)
    return [f.event(e) for e in events]


class TestBounds:
    def test_defaults(self):
        b = ExplorationBounds()
        assert (b.depth, b.max_msg, b.max_requests, b.max_states) == (60, 2, 1, 200_000)

    @pytest.mark.parametrize("kw", [{"max_msg": 0}, {"max_states": 0}, {"depth": -1}, {"max_requests": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ExplorationBounds(**kw)

    def test_default_pool(self):
        pool = default_pool(corpus_world("hotcrp_vuln"))
        assert pool == (Prim(True), Prim(False), Prim(0), Prim(1), Identity("atk"))


class TestProject:
    ev = [AuthEvt((Prim(1),), "usr", "usr", LC), AuthEvt((Prim(2),), "atk", "atk", LC),
          AuthEvt((Prim(3),), "usr", "atk", LC), AuthEvt((Prim(4),), "usr", "usr", Label(https("dE"), https("dE")))]

    def test_empty(self):
        assert project([], "usr", LC) == []

    def test_keeps_both_roles_in_order(self):
        assert [e.values[0].value for e in project(self.ev, "usr", LC)] == [1, 3]

    def test_drops_other_labels(self):
        assert all(e.label == LC for e in project(self.ev, "usr", LC))


class TestCanonical:
    def test_bijective_renaming(self):
        a = (AuthEvt((Name("f3"), Name("f5")), "usr", "usr", LC),)
        b = (AuthEvt((Name("f9"), Name("f2")), "usr", "usr", LC),)
        assert canonicalize(a) == canonicalize(b)

    def test_non_bijective_differs(self):
        a = (AuthEvt((Name("f3"), Name("f5")), "usr", "usr", LC),)
        b = (AuthEvt((Name("f9"), Name("f9")), "usr", "usr", LC),)
        assert canonicalize(a) != canonicalize(b)

    def test_declared_names_are_not_renamed(self):
        a = (AuthEvt((Name("pwusr"),), "usr", "usr", LC),)
        b = (AuthEvt((Name("pwatk"),), "usr", "usr", LC),)
        assert canonicalize(a) != canonicalize(b)

    def test_prefix(self):
        assert is_prefix((), (1,)) and is_prefix((1,), (1, 2)) and not is_prefix((2,), (1, 2))

    def test_state_keys_ignore_name_ids(self):
        w = corpus_world("hotcrp_fixed")
        run = run_honest(w)
        st = run.final
        k1 = Canon().state(st, 0)
        # shifting every fresh id leaves the key unchanged
        ids = {n.id for t in run.steps for n in _names(t.state)}
        mapping = {i: f"{i[0]}{int(i[1:]) + 100}" for i in ids if i[0] in "fng" and i[1:].isdigit()}
        assert Canon().state(rename(st, mapping), 0) == k1


def _names(st):
    return free_names((st.browser, st.servers, st.knowledge))


class TestSynthesis:
    def test_no_endpoints_no_moves(self):
        w = parse_world("domains {d}; url a = http://d/a; user { load(1, a, {}) }")
        e = Engine(w)
        assert synthesize_messages(e, e.initial()) == []

    def test_request_budget_spent(self):
        w = corpus_world("hotcrp_vuln")
        e = Engine(w)
        st = replace(e.initial(), attacker_requests=1)
        assert synthesize_messages(e, st, ExplorationBounds(max_requests=1)) == []

    def test_interception_enables_replay(self):
        w = parse_world(INTERCEPT)
        e = Engine(w)
        s = e.initial()
        while True:
            succ = e.successors(s, attacked=True)
            grab = [t for t in succ if t.rule == "A-BroAtk"]
            if grab and s.browser.queue.cookies:
                break
            s = min(succ, key=lambda t: t.prio).state
        t = grab[0]
        req = t.events[0]
        cookie = dict(req.cookies)["c"]
        assert {req.conn, cookie} <= t.state.knowledge
        moves = synthesize_messages(e, t.state)
        forged = [m for m in moves if isinstance(m, AtkRequest) and dict(m.cookies).get("c") == cookie]
        assert forged
        tr = e.apply_move(t.state, forged[0])
        assert tr is not None and tr.rule == "A-AtkSer" and tr.events[0].cookies == (("c", cookie),)
        # and the intercepted connection can be answered
        assert any(isinstance(m, AtkResponse) and m.conn == req.conn for m in moves)

    def test_unknown_names_rejected(self):
        w = parse_world(INTERCEPT)
        e = Engine(w)
        bogus = AtkRequest("atk", w.urls["a"], (), (("c", Name("zz")),))
        assert e.apply_move(e.initial(), bogus) is None

    def test_attacker_page_submits_own_credentials(self, vuln_verdict):
        moves = [s.move for s in vuln_verdict.witness if s.move is not None]
        scripts = [m.script for m in moves if isinstance(m, AtkResponse)]
        w = corpus_world("hotcrp_vuln")
        pw = w.passwords[("atk", w.urls["login"])]
        assert (Include(w.urls["login"], (Val(Identity("atk")), Val(pw))),) in scripts


class TestVerdict:
    def test_vulnerable_hotcrp(self, vuln_verdict):
        w = corpus_world("hotcrp_vuln")
        v = vuln_verdict
        assert v.status == VIOLATION and v.violation
        assert fmt(w, v.attacked_projection) == ['auth<"paper", "submit">@(usr, atk) lC']
        assert fmt(w, v.honest_projection) == ['auth<"paper", "submit">@(usr, usr) lC']
        assert fmt(w, [v.diverging]) == ['auth<"paper", "submit">@(usr, atk) lC']
        la = attacker_label(w.attacker, w.universe)
        assert not isilow(I(v.label), la)

    def test_witness_replays(self, vuln_verdict):
        w = corpus_world("hotcrp_vuln")
        assert replay(w, vuln_verdict.witness) == vuln_verdict.trace()

    def test_tampered_witness_fails(self, vuln_verdict):
        w = corpus_world("hotcrp_vuln")
        steps = list(vuln_verdict.witness)
        k = next(i for i, s in enumerate(steps) if s.move is not None)
        steps[k] = replace(steps[k], events=())
        with pytest.raises(ValueError):
            replay(w, steps)

    def test_honest_trace_is_not_a_violation(self):
        for name in ("hotcrp_vuln", "hotcrp_fixed", "phpmyadmin_vuln"):
            w = corpus_world(name)
            la = attacker_label(w.attacker, w.universe)
            events = run_honest(w).events
            honest = {k: (l, canonicalize(project(events, w.user, l)))
                      for k, l in enumerate(relevant_labels(w, la))}
            assert check_trace(events, honest, w.user) is None

    @pytest.mark.parametrize("depth", [20, 25, 40, 60])
    def test_larger_bounds_keep_the_violation(self, depth):
        v = check_session_integrity(corpus_world("hotcrp_vuln"), ExplorationBounds(depth=depth))
        assert v.status == VIOLATION

    def test_depth_below_honest_run(self):
        v = check_session_integrity(corpus_world("hotcrp_vuln"), ExplorationBounds(depth=19))
        assert v.status == EXHAUSTED and "honest run needs 20 steps" in v.note

    def test_state_budget(self):
        v = check_session_integrity(corpus_world("hotcrp_vuln"), ExplorationBounds(max_states=50))
        assert v.status == EXHAUSTED and "state budget" in v.note

    @pytest.mark.parametrize("name", ["moodle_vuln", "moodle_fixed", "hotcrp_ivc"])
    def test_vacuous(self, name):
        v = check_session_integrity(corpus_world(name))
        assert v.status == NO_VIOLATION and v.labels == [] and "no auth label" in v.note

    def test_attacker_below_every_label(self):
        w = corpus_world("hotcrp_vuln")
        # integrity at the bottom of the integrity order sits below every annotation
        strongest = Label(w.universe.top_c(), w.universe.bottom_i())
        assert relevant_labels(w, strongest) == []
        assert check_session_integrity(w, attacker=strongest).status == NO_VIOLATION
