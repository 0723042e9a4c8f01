import json
from pathlib import Path

import pytest

from conftest import corpus_world
from oracles import closure_equiv, label_equal
from websess.calculus import parse_world
from websess.calculus.syntax import Fresh, Include, SessionRef, Skip, Val
from websess.cli import corpus_dir, corpus_manifest, corpus_names
from websess.labels import AttackerSpec, Cred, Label, Plain, attacker_label, https
from websess.typechecker import (
    CSRF, HON, REJECTED, WELL_TYPED, Reject, TypingCtx, derivation_to_dict, render_derivation,
    type_cluster, type_expr, type_script,
)


def source(name):
    return Path(str(corpus_dir() / f"{name}.ws")).read_text()


def mutate(name, *subs):
    text = source(name)
    for old, new in subs:
        assert old in text, old
        text = text.replace(old, new)
    return parse_world(text)


def blame(verdict):
    return [(r.endpoint, r.branch, r.rule) for r in verdict.rejections()]


class TestCorpus:
    @pytest.mark.parametrize("name", corpus_names())
    def test_verdict_and_blame(self, name):
        want = corpus_manifest()["worlds"][name]["check"]
        v = type_cluster(corpus_world(name))
        assert v.ok == (want["status"] == "accepted")
        assert blame(v) == [(b["endpoint"], b["branch"], b["rule"]) for b in want["blame"]]

    def test_vulnerable_login_blamed_at_cookie_reply(self):
        v = type_cluster(corpus_world("hotcrp_vuln"))
        csrf = [r for r in v.rejections() if r.branch == CSRF]
        assert len(csrf) == 1 and csrf[0].rule == "T-Reply"
        assert "cookie sid" in csrf[0].message
        # the blamed line is the reply that sets sid
        line = source("hotcrp_vuln").splitlines()[csrf[0].line - 1]
        assert "sid -> x" in line

    def test_vulnerable_login_with_low_sid_fails_at_login(self):
        w = mutate("hotcrp_vuln",
                   ("glob r : cred lHL;", "glob r : cred low;"),
                   ("@glob r := fresh(lHL)", "@glob r := fresh(low)"),
                   ("cookie sid : cred lC on dC attrs {host-prefix};", "cookie sid : cred low on dC;"))
        hon = [r for r in type_cluster(w).rejections() if r.endpoint == "login" and r.branch == HON]
        assert [r.rule for r in hon] == ["T-Login"]

    def test_phpmyadmin_drop_blamed_at_auth(self):
        v = type_cluster(corpus_world("phpmyadmin_vuln"))
        assert ("drop", CSRF, "T-Auth") in blame(v)

    def test_empty_cluster(self):
        v = type_cluster(parse_world(""))
        assert v.ok and v.endpoints == {}

    @pytest.mark.parametrize("name", corpus_names())
    def test_deterministic(self, name):
        w = corpus_world(name)
        dumps = []
        for _ in range(2):
            v = type_cluster(w)
            dumps.append(json.dumps({k: [derivation_to_dict(e.derivation), [str(r) for r in e.rejections]]
                                     for k, e in v.endpoints.items()}, sort_keys=True))
        assert dumps[0] == dumps[1]


class TestWalkthrough:
    def test_login_session_transitions(self):
        v = type_cluster(corpus_world("hotcrp_ivc"))
        assert v.ok
        d = v.endpoints["login"].derivation
        starts = [n for n in d.preorder() if n.rule == "T-Start" and n.branch == HON]
        w = corpus_world("hotcrp_ivc")
        u = w.universe
        # each branch opens the pre-session; the second then moves to the authenticated one
        assert len(starts) == 3
        pre = Label(https("dC"), u.top_i())
        assert [s.session_in for s in starts[:2]] == [None, None]
        assert label_equal(starts[0].session_out, pre) and label_equal(starts[1].session_out, pre)
        assert label_equal(starts[2].session_in, pre)
        assert label_equal(starts[2].session_out, Label(https("dC"), https("dC")))

    def test_csrf_branch_prunes_token_check(self):
        d = type_cluster(corpus_world("hotcrp_ivc")).endpoints["login"].derivation
        csrf = [n.rule for n in d.preorder() if n.branch == CSRF]
        assert "T-PruneTChk" in csrf and "T-TChk" not in csrf

    def test_removing_token_check_exposes_auth(self):
        w = mutate("hotcrp_fixed", ("""tokenchk(token, @sess utoken) {
        auth(paper, action) @ lC;
        reply({}) {skip} {}
      }""", """auth(paper, action) @ lC;
      reply({}) {skip} {}"""))
        assert blame(type_cluster(w)) == [("manage", CSRF, "T-Auth")]

    def test_missing_pre_session(self):
        w = mutate("hotcrp_fixed", ("      start(@glob pre);\n", ""))
        assert blame(type_cluster(w)) == [("login", HON, "T-TChk"), ("login", CSRF, "T-TChk")]

    def test_render(self):
        w = corpus_world("hotcrp_fixed")
        d = type_cluster(w).endpoints["manage"].derivation
        text = render_derivation(d)
        assert text.splitlines()[0] == "T-Recv"
        assert "[hon] T-Seq" in text and "[csrf] T-Seq" in text
        assert text.splitlines()[-1].strip().startswith("T-PruneTChk")


class TestExpressions:
    def ctx(self, branch=HON):
        w = corpus_world("hotcrp_ivc")
        la = attacker_label(w.attacker, w.universe)
        return w, TypingCtx(w.env, la, w.universe, w.urls["login"], branch, w.env.protected)

    def test_fresh(self):
        _, ctx = self.ctx()
        lab = Label(https("dC"), https("dC"))
        assert type_expr(ctx, None, Fresh(Cred(lab))) == Cred(lab)

    def test_constant(self):
        w, ctx = self.ctx()
        assert type_expr(ctx, None, Val(True)) == Plain(w.universe.bottom())

    def test_session_reference_is_capped(self):
        w, ctx = self.ctx()
        pre = Label(https("dC"), w.universe.top_i())
        t = type_expr(ctx, pre, SessionRef("ltoken"))
        assert isinstance(t, Cred)
        assert closure_equiv(t.label.conf, https("dC"))
        assert closure_equiv(t.label.integ, w.universe.top_i())

    def test_session_reference_needs_session(self):
        _, ctx = self.ctx()
        with pytest.raises(Reject) as e:
            type_expr(ctx, None, SessionRef("ltoken"))
        assert e.value.rule == "T-ESesRef"


class TestScriptsAndForms:
    def test_include_low_integrity_in_hon(self):
        w = mutate("hotcrp_fixed", ("reply({auth -> form(login, [UNDEF, UNDEF, x])}) {skip}",
                                    "reply({auth -> form(login, [UNDEF, UNDEF, x])}) {include(evil, [])}"))
        assert blame(type_cluster(w)) == [("login", HON, "T-BInclude")]

    def test_form_tag_must_match_target(self):
        w = mutate("hotcrp_fixed", ("reply({link -> form(manage, [UNDEF, UNDEF, UNDEF])}) {skip}",
                                    "reply({link -> form(evil, [])}) {skip}"))
        assert blame(type_cluster(w)) == [("login", HON, "T-Form")]

    def test_skip_script(self):
        w = corpus_world("hotcrp_fixed")
        la = attacker_label(w.attacker, w.universe)
        ctx = TypingCtx(w.env, la, w.universe, w.urls["login"], HON, w.env.protected)
        assert type_script(ctx, https("dC"), Skip()) is None

    def test_attacker_script_types_in_csrf(self):
        w = corpus_world("hotcrp_vuln")
        la = attacker_label(w.attacker, w.universe)
        evil = w.urls["evil"]
        atk = next(i for i in w.attacker.identities)
        pw = next(p for (who, _), p in w.passwords.items() if who == atk)
        s = Include(w.urls["login"], (Val(atk), Val(pw)))
        ctx = TypingCtx(w.env, la, w.universe, evil, CSRF, w.env.protected)
        type_script(ctx, w.universe.top_i(), s)
        # the user's own password may not be used by an attacker script
        usr = w.passwords[("usr", w.urls["login"])]
        with pytest.raises(Reject) as e:
            type_script(ctx, w.universe.top_i(), Include(w.urls["login"], (Val(atk), Val(usr))))
        assert e.value.rule == "T-BInclude"


def test_skip_then_error_reply():
    w = parse_world("""
domains {dC, dE};
url a = https://dC/a;
attacker web(dE);
urltype a : ((HTTPS(dC) ; HTTPS(dC)), [], HTTPS(dC));
server s { listen(a)[]() { skip; reply(error) {skip} {} } }
""")
    v = type_cluster(w)
    assert v.ok
    rules = [n.rule for n in v.endpoints["a"].derivation.preorder()]
    assert rules == ["T-Recv", "T-Seq", "T-Skip", "T-Reply", "T-Seq", "T-Skip", "T-Reply"]


def test_skip_only_derivation_has_three_nodes():
    w = parse_world("""
domains {dC, dE};
url a = https://dC/a;
attacker web(dE);
urltype a : ((HTTPS(dC) ; HTTPS(dC)), [], HTTPS(dC));
server s { listen(a)[]() { skip } }
""")
    d = type_cluster(w).endpoints["a"].derivation
    assert d.size() == 3
    assert [(n.rule, n.branch) for n in d.preorder()] == [("T-Recv", ""), ("T-Skip", HON), ("T-Skip", CSRF)]


ORIGIN = """
domains {dC, dE};
label lC = (HTTPS(dC) ; HTTPS(dC));
url page = https://dC/page;
url act = https://dC/act;
attacker web(dE);
urltype page : (lC, [], HTTPS(dC));
urltype act : (lC, [lC], HTTPS(dC));
cookie sid : cred lC on dC attrs {host-prefix};
%s
server s {
  listen(act)[sid](a) {
    start(@glob sid);
    originchk({%s}) { auth(a) @ lC; reply({}) {skip} {} }
  }
  listen(page)[]() { reply({}) {%s} {} }
}
"""


class TestProtectedSet:
    def verdicts(self, prot, origins, script="skip"):
        v = type_cluster(parse_world(ORIGIN % ("protected {act};" if prot else "", origins, script)))
        return {k: e.status for k, e in v.endpoints.items()}, blame(v)

    def test_origin_check_prunes_only_when_protected(self):
        assert self.verdicts(True, "HTTPS(dC)")[0]["act"] == WELL_TYPED
        st, bl = self.verdicts(False, "HTTPS(dC)")
        assert st["act"] == REJECTED and bl == [("act", CSRF, "T-Auth")]

    def test_low_origin_never_prunes(self):
        for prot in (True, False):
            assert self.verdicts(prot, "HTTPS(dC), HTTPS(dE)")[1] == [("act", CSRF, "T-Auth")]

    def test_include_of_protected_url(self):
        st, bl = self.verdicts(True, "HTTPS(dC)", "include(act, [UNDEF])")
        assert bl == [("page", HON, "T-BInclude")]
        assert self.verdicts(False, "HTTPS(dC)", "include(act, [UNDEF])")[0]["page"] == WELL_TYPED

    def test_shrinking_protected_set(self):
        # the origin check is the only rule that gains from membership
        for origins in ("HTTPS(dC)", "HTTPS(dC), HTTPS(dE)"):
            with_p, _ = self.verdicts(True, origins)
            without, _ = self.verdicts(False, origins)
            assert not (with_p["act"] == REJECTED and without["act"] == WELL_TYPED)


@pytest.mark.parametrize("name", [n for n in corpus_names() if corpus_world(n).attacker.kind == "related"])
def test_related_acceptance_survives_web_attacker(name):
    w = corpus_world(name)
    web = attacker_label(AttackerSpec("web", "dE"), w.universe)
    related = type_cluster(w)
    against_web = type_cluster(w, web)
    for ep, v in related.endpoints.items():
        if v.ok:
            assert against_web.endpoints[ep].ok
