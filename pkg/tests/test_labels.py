import itertools

import pytest

from oracles import closure_equiv, closure_leq, label_equal
from websess.labels import (
    CONF, HOST_PREFIX, INTEG, SECURE_PREFIX, URL, AttackerSpec, CookieSpec, Cred, Join,
    Label, LabelError, Meet, Plain, Universe, attacker_label, cap_session, classify,
    distributive_leq, equiv, http, https, is_cred, join_c, join_i, lambda_of, lattice,
    leq, leq_conf, meet_c, meet_i, size, subtype,
)
from websess.oracle import enumerate_terms

U2 = Universe(("d1", "d2"))
UCE = Universe(("dC", "dE"), (frozenset({"dC", "dE"}),))
a, b, c = http("d1"), https("d1"), http("d2")


def web(d, u=UCE):
    return attacker_label(AttackerSpec("web", d), u)


class TestOrder:
    def test_reflexive_atom(self):
        assert leq(a, a, CONF)

    def test_join_introduction(self):
        assert leq(a, Join(a, b), CONF)

    def test_free_not_distributive(self):
        lhs = Meet(a, Join(b, c))
        rhs = Join(Meet(a, b), Meet(a, c))
        assert leq(lhs, rhs, CONF) is False
        assert leq(rhs, lhs, CONF) is True
        # the oracle agrees, and the distributive order would say yes
        assert closure_leq(lhs, rhs) is False
        assert closure_leq(rhs, lhs) is True
        assert distributive_leq(lhs, rhs) is True

    def test_integrity_is_reversed(self):
        assert leq(Join(a, b), a, INTEG)
        assert not leq(a, Join(a, b), INTEG)

    def test_unknown_domain_rejected(self):
        with pytest.raises(LabelError):
            leq(http("zz"), a, CONF, U2)

    def test_meet_elimination(self):
        assert leq_conf(Meet(a, b), a)
        assert not leq_conf(a, Meet(a, b))

    def test_size(self):
        assert size(Join(a, Meet(b, c))) == 5


class TestBounds:
    def test_top_i_is_bottom_c(self):
        assert U2.top_i() == U2.bottom_c()
        assert U2.bottom_i() == U2.top_c()

    def test_bottom_is_unit_for_join(self):
        for l in (a, b, Join(a, c)):
            assert equiv(join_c(l, U2.bottom_c()), l)

    def test_bottom_c_strictly_below_one_domain(self):
        d1 = Meet(http("d1"), https("d1"))
        assert leq(d1, U2.bottom_c(), CONF) is False
        assert leq(U2.bottom_c(), d1, CONF) is True
        assert closure_leq(U2.bottom_c(), d1) and not closure_leq(d1, U2.bottom_c())

    def test_integrity_ops_are_dual(self):
        assert join_i(a, b) == meet_c(a, b)
        assert meet_i(a, b) == join_c(a, b)

    def test_lattice_dispatch(self):
        assert lattice(U2, "top_i") == U2.bottom_c()
        assert lattice(U2, "join_c", a, b) == join_c(a, b)

    def test_empty_universe(self):
        with pytest.raises(LabelError):
            Universe(()).bottom_c()


class TestSubtype:
    la = web("dE")
    hi = Label(https("dC"), https("dC"))

    def test_reflexive(self):
        assert subtype(Plain(self.hi), Plain(self.hi), self.la)

    def test_no_upcast_to_secret_credential(self):
        assert not subtype(Plain(UCE.bottom()), Cred(self.hi), self.la)

    def test_low_credential_collapses_to_low_plain(self):
        t = Cred(Label(http("dE"), UCE.top_i()))
        assert subtype(t, Plain(UCE.low()), self.la)
        # the two premises, decided by saturation
        assert closure_leq(http("dE"), self.la.conf)
        assert closure_leq(UCE.top_i(), self.la.integ)

    def test_credentials_are_not_ordered_by_label(self):
        lo = Label(UCE.bottom_c(), https("dC"))
        assert not subtype(Cred(lo), Cred(self.hi), self.la)
        assert subtype(Plain(lo), Plain(self.hi), self.la)


class TestLambda:
    def test_url(self):
        assert label_equal(lambda_of(URL("https", "dC", "/x"), UCE), Label(https("dC"), https("dC")))
        assert label_equal(lambda_of(URL("http", "dE"), UCE), Label(http("dE"), http("dE")))

    # expected labels transcribed from the cookie-label displays
    def test_plain_cookie(self):
        got = lambda_of(CookieSpec("dC"), UCE)
        want = Label(Meet(http("dC"), https("dC")),
                     Meet(Meet(http("dC"), https("dC")), Meet(http("dE"), https("dE"))))
        assert label_equal(got, want)

    def test_secure_cookie_keeps_integrity(self):
        got = lambda_of(CookieSpec("dC", secure=True), UCE)
        want = Label(https("dC"), Meet(Meet(http("dC"), https("dC")), Meet(http("dE"), https("dE"))))
        assert label_equal(got, want)

    def test_secure_prefix(self):
        got = lambda_of(CookieSpec("dC", prefix=SECURE_PREFIX), UCE)
        assert label_equal(got, Label(https("dC"), Meet(https("dC"), https("dE"))))

    def test_host_prefix(self):
        got = lambda_of(CookieSpec("dC", prefix=HOST_PREFIX), UCE)
        assert label_equal(got, Label(https("dC"), https("dC")))
        assert label_equal(got, lambda_of(URL("https", "dC"), UCE))

    def test_host_prefix_with_domain_attribute_is_invalid(self):
        with pytest.raises(LabelError):
            CookieSpec("dC", domain_attribute="dC", prefix=HOST_PREFIX)

    def test_domain_attribute(self):
        u = Universe(("a", "s"), (frozenset({"a", "s"}),), subdomain_pairs=frozenset({("s", "a")}))
        got = lambda_of(CookieSpec("a", domain_attribute="a"), u)
        want = Label(Meet(Meet(http("a"), https("a")), Meet(http("s"), https("s"))),
                     Meet(Meet(http("a"), https("a")), Meet(http("s"), https("s"))))
        assert label_equal(got, want)

    def test_hsts_partial(self):
        got = lambda_of(CookieSpec("dC", secure=True), UCE, hsts={"dC"})
        want = Label(https("dC"), Meet(http("dE"), Meet(https("dC"), https("dE"))))
        assert label_equal(got, want)

    def test_hsts_everywhere_equals_secure_prefix(self):
        got = lambda_of(CookieSpec("dC", secure=True), UCE, hsts={"dC", "dE"})
        assert label_equal(got, lambda_of(CookieSpec("dC", prefix=SECURE_PREFIX), UCE))

    def test_hsts_never_lowers_integrity(self):
        for spec in (CookieSpec("dC"), CookieSpec("dC", secure=True), CookieSpec("dE")):
            for hs in (set(), {"dC"}, {"dE"}, {"dC", "dE"}):
                for more in ({"dC"}, {"dE"}):
                    before = lambda_of(spec, UCE, hsts=hs).integ
                    after = lambda_of(spec, UCE, hsts=hs | more).integ
                    # fewer writers: the new label sits below the old one in the integrity order
                    assert leq(after, before, INTEG)


class TestAttackers:
    def test_web(self):
        la = web("dE")
        want = Join(http("dE"), https("dE"))
        assert label_equal(la, Label(want, want))
        # the attacker can write at both of its own origins
        assert closure_leq(https("dE"), la.integ) and closure_leq(http("dE"), la.integ)

    def test_network(self):
        la = attacker_label(AttackerSpec("network"), U2)
        assert closure_equiv(la.conf, Join(http("d1"), http("d2")))
        assert closure_equiv(la.integ, Join(http("d1"), http("d2")))

    def test_related_is_web_of_the_sibling(self):
        assert label_equal(attacker_label(AttackerSpec("related", "dC"), UCE), web("dE"))

    def test_related_singleton_rejected(self):
        with pytest.raises(LabelError):
            attacker_label(AttackerSpec("related", "d1"), U2)

    def test_classify(self):
        la = web("dE")
        assert classify(la.conf, la, CONF) == "low"
        assert classify(https("dC"), la, CONF) == "high"
        assert not closure_leq(https("dC"), la.conf)
        net = attacker_label(AttackerSpec("network"), U2)
        assert classify(Meet(http("d1"), https("d1")), net, CONF) == "low"


class TestCapSession:
    def test_top_is_unit(self):
        t = Plain(Label(https("dC"), http("dE")))
        got = cap_session(t, UCE.top())
        assert label_equal(got.label, t.label)

    def test_preserves_credentials(self):
        assert is_cred(cap_session(Cred(UCE.low()), Label(https("dC"), UCE.top_i())))

    def test_meets(self):
        got = cap_session(Plain(Label(https("d1"), https("d1"))), U2.low())
        assert not is_cred(got)
        # confidentiality meet reaches bottom; the integrity meet keeps https(d1),
        # since low()'s integrity is the top of that order
        assert closure_equiv(got.label.conf, U2.bottom_c())
        assert closure_equiv(got.label.integ, https("d1"))


def test_exhaustive_preorder_on_small_terms():
    terms = enumerate_terms(("d1", "d2"), 3)
    for s in terms:
        assert leq_conf(s, s)
    for s, t, u in itertools.product(terms, repeat=3):
        if leq_conf(s, t) and leq_conf(t, u):
            assert leq_conf(s, u)
