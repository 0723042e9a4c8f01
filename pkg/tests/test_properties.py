"""Generated-case suites.  Each body bumps ``COUNTS`` so the acceptance run
can confirm how many cases were exercised."""

from collections import Counter
from dataclasses import replace

from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import corpus_world
from oracles import closure_leq, rename
from strategies import simple_labels
from websess.calculus.syntax import Name
from websess.cli import corpus_names
from websess.engine import AtkRequest, AtkResponse, Engine, cookie_filter, dump_trace
from websess.harness import Canon, ExplorationBounds, Synthesizer, WitnessStep, canonicalize, is_fresh_name, replay
from websess.labels import (
    CONF, HOST_PREFIX, INTEG, SECURE_PREFIX, URL, AttackerSpec, CookieSpec, Cred, Join, Label, Meet,
    Plain, Universe, attacker_label, cookie_label, equiv, isclow, join_c, join_i, leq, leq_conf, meet_c, meet_i,
    subtype, type_equiv, url_label,
)

N = 1000
COUNTS: Counter = Counter()
many = settings(max_examples=N)

D2 = ("d1", "d2")

U = Universe(D2, (frozenset(D2),))
ATTACKERS = [attacker_label(s, U) for s in
             (AttackerSpec("web", "d1"), AttackerSpec("web", "d2"), AttackerSpec("network"), AttackerSpec("related", "d1"))]

small = simple_labels(D2, max_leaves=4)
bounded = st.one_of(small, st.sampled_from([U.bottom_c(), U.top_c()]))
labels = st.builds(Label, bounded, bounded)
sectypes = st.one_of(st.builds(Plain, labels), st.builds(Cred, labels))
attackers = st.sampled_from(ATTACKERS)


# ---------------------------------------------------------------- lattice laws


@many
@given(small, small, small)
def test_preorder_laws(a, b, c):
    COUNTS["preorder"] += 1
    assert leq_conf(a, a)
    if leq_conf(a, b) and leq_conf(b, c):
        assert leq_conf(a, c)
    # bounds and the saturation oracle
    assert leq_conf(a, Join(a, b)) and leq_conf(Meet(a, b), a)
    assert leq_conf(a, b) == closure_leq(a, b)


@many
@given(bounded, bounded)
def test_conf_integ_contravariance(a, b):
    COUNTS["contravariance"] += 1
    assert leq(a, b, CONF) == leq(b, a, INTEG)
    assert equiv(join_i(a, b), meet_c(a, b)) and equiv(meet_i(a, b), join_c(a, b))
    assert leq(a, join_i(a, b), INTEG) and leq(meet_i(a, b), a, INTEG)


# ---------------------------------------------------------------- subtyping


@many
@given(sectypes, sectypes, sectypes, attackers)
def test_subtype_laws(s, t, u, la):
    COUNTS["subtype"] += 1
    assert subtype(s, s, la)
    if subtype(s, t, la) and subtype(t, u, la):
        assert subtype(s, u, la)
    # a credential the attacker cannot read has no proper subtypes
    if isinstance(t, Cred) and not isclow(t.label.conf, la):
        assert subtype(s, t, la) == type_equiv(s, t)


# ---------------------------------------------------------------- cookies

COOKIES = {
    f"c{k}": spec for k, spec in enumerate([
        CookieSpec("d1"), CookieSpec("d1", secure=True), CookieSpec("d1", prefix=SECURE_PREFIX),
        CookieSpec("d1", prefix=HOST_PREFIX), CookieSpec("d2"), CookieSpec("d2", secure=True),
        CookieSpec("d2", prefix=HOST_PREFIX), CookieSpec("d1", domain_attribute="d1"),
    ])
}
urls = st.builds(URL, st.sampled_from(["http", "https"]), st.sampled_from(D2))
jars = st.dictionaries(st.sampled_from(sorted(COOKIES)), st.integers(0, 3))
hsts_sets = st.sets(st.sampled_from(D2))


@many
@given(jars, jars, urls, urls, hsts_sets)
def test_cookie_filter_monotone(j1, j2, u1, u2, hs):
    COUNTS["cookie_filter"] += 1
    lab = {r: cookie_label(s, U, hs) for r, s in COOKIES.items()}
    small_jar = {r: v for r, v in j1.items() if r in j2 and j2[r] == v}
    g_small = cookie_filter("get", small_jar, u1, cookie_labels=lab)
    g_big = cookie_filter("get", j2, u1, cookie_labels=lab)
    assert g_small.items() <= g_big.items() <= j2.items()
    if leq_conf(url_label(u1).conf, url_label(u2).conf):
        assert set(g_big) <= set(cookie_filter("get", j2, u2, cookie_labels=lab))
    # updates only add what the URL may write, and more input sets more
    up_small = cookie_filter("upd", {}, u1, small_jar, cookie_labels=lab)
    up_big = cookie_filter("upd", {}, u1, j2, cookie_labels=lab)
    assert set(up_small) <= set(up_big)
    kept = cookie_filter("upd", j1, u1, j2, cookie_labels=lab)
    assert set(j1) <= set(kept)
    for r, v in kept.items():
        assert v == (up_big[r] if r in up_big else j1[r])


# ---------------------------------------------------------------- runs


def move_of(t):
    if t.rule == "A-AtkSer":
        r = t.events[0]
        return AtkRequest(r.ident, r.url, r.params, r.cookies, r.origin)
    if t.rule == "A-AtkBro":
        r = t.events[0]
        return AtkResponse(r.conn, r.redirect, r.params, r.cookies, r.page, r.script)
    return None


_ENGINES: dict = {}


def random_walk(data, world, max_len=40):
    # engines are reused so their lattice caches stay warm
    e = _ENGINES.get(id(world)) or _ENGINES.setdefault(id(world), Engine(world))
    syn = Synthesizer(e, ExplorationBounds())
    state = e.initial()
    steps, states = [], [state]
    for _ in range(data.draw(st.integers(0, max_len), label="length")):
        succ = e.successors(state, attacked=True, moves=syn.moves(state))
        if not succ:
            break
        t = succ[data.draw(st.integers(0, len(succ) - 1), label="choice")]
        steps.append(WitnessStep(t.rule, t.detail, t.events, move_of(t)))
        state = t.state
        states.append(state)
    return steps, states


worlds = st.sampled_from(corpus_names())


@many
@given(worlds, st.data())
def test_knowledge_monotone(name, data):
    COUNTS["knowledge"] += 1
    _, states = random_walk(data, corpus_world(name))
    for a, b in zip(states, states[1:]):
        assert a.knowledge <= b.knowledge


@many
@given(worlds, st.data())
def test_witness_replay(name, data):
    COUNTS["witness"] += 1
    w = corpus_world(name)
    steps, states = random_walk(data, w)
    events = [e for s in steps for e in s.events]
    assert replay(w, steps) == events


@many
@given(worlds, st.data())
def test_honest_run_replay_identical(name, data):
    COUNTS["honest"] += 1
    w = corpus_world(name)
    # any sequence of the world's own actions, repeats and reorderings included
    picks = data.draw(st.lists(st.integers(0, max(len(w.actions) - 1, 0)), max_size=len(w.actions) + 3))
    w2 = replace(w, actions=tuple(w.actions[k] for k in picks if w.actions))
    e = Engine(w2)
    first, second, fresh = e.run_honest(), e.run_honest(), Engine(w2).run_honest()
    text = dump_trace(w2, first.steps)
    assert dump_trace(w2, second.steps) == text == dump_trace(w2, fresh.steps)
    assert first.final == second.final == fresh.final
    assert first.nondeterminism is None and fresh.nondeterminism is None


@many
@given(worlds, st.data(), st.randoms(use_true_random=False))
def test_canonical_under_renaming(name, data, rnd):
    COUNTS["canonical"] += 1
    w = corpus_world(name)
    steps, states = random_walk(data, w)
    events = tuple(e for s in steps for e in s.events)
    ids = sorted({n.id for n in _names((events, states[-1])) if is_fresh_name(n)})
    targets = [f"{i[0]}{k}" for k, i in enumerate(rnd.sample(ids, len(ids)), 1000)]
    mapping = dict(zip(ids, targets))
    assert canonicalize(rename(events, mapping)) == canonicalize(events)
    assert Canon().state(rename(states[-1], mapping), 0) == Canon().state(states[-1], 0)
    used = sorted({n.id for n in _names(events) if is_fresh_name(n)})
    if len(used) >= 2:
        # merging two names is not a bijection and must be seen
        a, b = rnd.sample(used, 2)
        assert canonicalize(rename(events, {a: b})) != canonicalize(events)


def _names(x):
    out = set()

    def walk(y):
        if isinstance(y, Name):
            out.add(y)
        elif isinstance(y, (tuple, list, frozenset, set)):
            for z in y:
                walk(z)
        elif hasattr(y, "__dataclass_fields__"):
            for f in y.__dataclass_fields__:
                walk(getattr(y, f))
    walk(x)
    return out


SUITES = {
    "preorder": test_preorder_laws,
    "contravariance": test_conf_integ_contravariance,
    "subtype": test_subtype_laws,
    "cookie_filter": test_cookie_filter_monotone,
    "knowledge": test_knowledge_monotone,
    "honest": test_honest_run_replay_identical,
    "witness": test_witness_replay,
    "canonical": test_canonical_under_renaming,
}
