"""Syntax-directed security type checker for endpoints, forms and scripts.

Every endpoint is typed twice: once as an honest request (branch ``hon``)
and once as a cross-site request whose parameters the attacker picked
(branch ``csrf``).  A branch stops at its first failing premise, which is
reported with the rule name, the source position and the failing query.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .calculus.parser import line_col
from .calculus.pretty import Printer
from .calculus.syntax import (
    ERROR_PAGE, UNDEF, Assign, Auth, BinOp, CookieRef, Dom, Fresh, GlobalRef, Halt,
    Identity, If, Include, Login, Name, OriginCheck, Prim, Redirect, Reply, Seq,
    SessionRef, SetDom, SetGlobal, SetSession, Skip, Start, TokenCheck, Val, Var,
    commands_in, vars_of,
)
from .envcfg import TypingEnv, check_wellformed_env
from .labels import (
    URL, Cred, Label, Plain, SecType, attacker_label, cap_session, equiv, is_cred,
    isclow, isilow, join_i, label_equiv, label_join, label_leq, leq_conf, subtype,
)

HON, CSRF = "hon", "csrf"
WELL_TYPED, REJECTED = "well-typed", "rejected"

# reaching the continuation of an ``if`` depends on the branch taken when
# one of these occurs in it
_DIVERTING = (Reply, Redirect, TokenCheck, OriginCheck)


def ileq(a, b) -> bool:
    """``a`` flows to ``b`` in the integrity order."""
    return leq_conf(b, a)


class Reject(Exception):
    def __init__(self, rule: str, node, message: str, query: str = ""):
        super().__init__(message)
        self.rule = rule
        self.node = node
        self.message = message
        self.query = query


@dataclass
class Derivation:
    rule: str
    pos: int = -1
    branch: str = ""
    session_in: Label | None = None
    pc_in: object = None
    session_out: Label | None = None
    pc_out: object = None
    note: str = ""
    children: list = field(default_factory=list)
    failed: bool = False

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def preorder(self):
        yield self
        for c in self.children:
            yield from c.preorder()

    def last(self) -> "Derivation":
        node = self
        while node.children:
            node = node.children[-1]
        return node


@dataclass(frozen=True)
class Rejection:
    endpoint: str
    branch: str
    rule: str
    pos: int
    line: int
    col: int
    message: str
    query: str = ""

    def __str__(self):
        q = f" [{self.query}]" if self.query else ""
        return f"{self.endpoint} ({self.branch}) {self.line}:{self.col} {self.rule}: {self.message}{q}"


@dataclass
class TypingVerdict:
    endpoint: str
    status: str
    rejections: list = field(default_factory=list)
    derivation: Derivation | None = None

    @property
    def ok(self) -> bool:
        return self.status == WELL_TYPED


@dataclass
class ClusterVerdict:
    endpoints: dict = field(default_factory=dict)  # name -> TypingVerdict
    env_violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.env_violations and all(v.ok for v in self.endpoints.values())

    def rejections(self) -> list[Rejection]:
        return [r for v in self.endpoints.values() for r in v.rejections]


@dataclass(frozen=True)
class TypingCtx:
    env: TypingEnv
    attacker: Label
    universe: object
    url: URL
    branch: str
    protected: frozenset
    printer: Printer | None = None

    def fmt(self, x) -> str:
        if self.printer is None:
            return str(x)
        if isinstance(x, Label):
            return self.printer.label(x)
        if isinstance(x, (Plain, Cred)):
            return self.printer.sectype(x)
        if x is None:
            return "x"
        return self.printer.simple(x, True)

    def fmt_c(self, x) -> str:
        return self.printer.simple(x, False) if self.printer else str(x)

    def bottom(self) -> SecType:
        return Plain(self.universe.bottom())

    def low(self) -> Label:
        return self.universe.low()


# ---------------------------------------------------------------- expressions


def type_expr(ctx: TypingCtx, session: Label | None, e) -> SecType:
    """Most precise type of a server expression; UNDEF synthesises as bottom."""
    match e:
        case Val(v):
            if isinstance(v, Name):
                return v.ann
            return ctx.bottom()
        case Fresh(ann):
            return ann
        case Var(name):
            t = ctx.env.vars.get(name)
            if t is None:
                raise Reject("T-EVar", e, f"variable {name} is not in scope")
            return t
        case GlobalRef(r):
            t = ctx.env.globals.get(r)
            if t is None:
                raise Reject("T-EGlobRef", e, f"global reference {r} has no type")
            return t
        case SessionRef(r):
            return session_ref_type(ctx, session, r, e, "T-ESesRef")
        case BinOp(op, a, b):
            ta, tb = type_expr(ctx, session, a), type_expr(ctx, session, b)
            if op != "=" and (is_cred(ta) or is_cred(tb)):
                raise Reject("T-EBinOp", e, f"operator {op} applied to a credential")
            return Plain(label_join(ta.label, tb.label))
    raise Reject("T-EVal", e, f"not a server expression: {e!r}")


def session_ref_type(ctx, session, r, node, rule) -> SecType:
    if session is None:
        raise Reject(rule, node, f"session reference {r} used with no active session")
    t = ctx.env.sessions.get(r)
    if t is None:
        raise Reject(rule, node, f"session reference {r} has no type")
    return cap_session(t, session)


def is_undef(e) -> bool:
    return (isinstance(e, Val) and e.value is UNDEF) or e is UNDEF


def check_expr(ctx: TypingCtx, session, e, expected: SecType) -> tuple[bool, SecType | None]:
    if is_undef(e):
        return True, expected
    t = type_expr(ctx, session, e)
    return subtype(t, expected, ctx.attacker), t


def _cred_candidates(ctx: TypingCtx, session, e, prefer: str) -> list[Label]:
    """Credential labels the expression can be given via subsumption.

    High-confidentiality credentials admit only their own label; anything in
    the collapsed low class can be retyped as any low credential, of which
    we return the extreme one for the role at hand.
    """
    la = ctx.attacker
    u = ctx.universe
    if prefer == "secret":
        low_pick = Label(u.bottom_c(), la.integ)
        undef_pick = Label(u.bottom_c(), u.bottom_i())
    else:
        low_pick = Label(la.conf, u.top_i())
        undef_pick = Label(u.top_c(), u.top_i())
    if is_undef(e):
        return [undef_pick]
    t = type_expr(ctx, session, e)
    out = []
    if is_cred(t):
        out.append(t.label)
    if subtype(t, Cred(low_pick), la):
        out.append(low_pick)
    return out


# ---------------------------------------------------------------- commands


class Checker:
    def __init__(self, ctx: TypingCtx, world=None):
        self.ctx = ctx
        self.world = world

    def node(self, rule, c, session, pc, note="") -> Derivation:
        return Derivation(rule, getattr(c, "pos", -1), self.ctx.branch, session, pc, note=note)

    def expr(self, session, e):
        return type_expr(self.ctx, session, e)

    def cmd(self, session, pc, c, parent: Derivation):
        """Type ``c``; returns the outgoing (session, pc).  Appends nodes to
        ``parent``; on failure the failing node is appended and marked."""
        ctx = self.ctx
        match c:
            case Skip() | Halt():
                parent.children.append(self._done(self.node("T-Skip", c, session, pc), session, pc))
                return session, pc
            case Seq(a, b):
                n = self.node("T-Seq", c, session, pc)
                parent.children.append(n)
                s1, p1 = self.cmd(session, pc, a, n)
                s2, p2 = self.cmd(s1, p1, b, n)
                return self._done(n, s2, p2) and (s2, p2)
            case If(cond, then, orelse):
                n = self.node("T-If", c, session, pc)
                parent.children.append(n)
                t = self.guard(n, session, cond)
                pc1 = join_i(pc, t.integ if isinstance(t, Label) else t.label.integ)
                n.note = f"pc' = {ctx.fmt(pc1)}"
                sa, pa = self.cmd(session, pc1, then, n)
                sb, pb = self.cmd(session, pc1, orelse, n)
                diverts = any(k in commands_in(then) or k in commands_in(orelse) for k in _DIVERTING)
                pc2 = join_i(pa, pb) if diverts else pc
                s_out = sa if _same_session(sa, sb) else None
                self._done(n, s_out, pc2)
                return s_out, pc2
            case SetGlobal(r, e) | SetSession(r, e):
                rule = "T-SetGlobal" if isinstance(c, SetGlobal) else "T-SetSession"
                n = self.node(rule, c, session, pc)
                parent.children.append(n)
                try:
                    if rule == "T-SetGlobal":
                        target = ctx.env.globals.get(r)
                        if target is None:
                            raise Reject(rule, c, f"global reference {r} has no type")
                    else:
                        target = session_ref_type(ctx, session, r, c, rule)
                    ok, t = check_expr(ctx, session, e, target)
                    if not ok:
                        raise Reject(rule, c, f"value of type {ctx.fmt(t)} cannot be stored in {r} : {ctx.fmt(target)}",
                                     f"{ctx.fmt(t)} <= {ctx.fmt(target)}")
                    if not ileq(pc, target.label.integ):
                        raise Reject(rule, c, f"write to {r} under a pc of lower integrity",
                                     f"{ctx.fmt(pc)} <=I {ctx.fmt(target.label.integ)}")
                except Reject as rj:
                    self._fail(n, rj)
                return self._done(n, session, pc) and (session, pc)
            case Login(u, pw, sid):
                n = self.node("T-Login", c, session, pc)
                parent.children.append(n)
                try:
                    self.t_login(session, pc, c, u, pw, sid)
                except Reject as rj:
                    self._fail(n, rj)
                return self._done(n, session, pc) and (session, pc)
            case Start(e):
                n = self.node("T-Start", c, session, pc)
                parent.children.append(n)
                try:
                    s_out = self.t_start(session, pc, c, e)
                except Reject as rj:
                    self._fail(n, rj)
                n.note = f"session {ctx.fmt(session)} -> {ctx.fmt(s_out)}"
                return self._done(n, s_out, pc) and (s_out, pc)
            case Auth(args, lab):
                n = self.node("T-Auth", c, session, pc)
                parent.children.append(n)
                try:
                    self.t_auth(session, pc, c, args, lab)
                except Reject as rj:
                    self._fail(n, rj)
                return self._done(n, session, pc) and (session, pc)
            case TokenCheck(x, r, body):
                return self.t_tokenchk(session, pc, c, x, r, body, parent)
            case OriginCheck(origins, body):
                if (ctx.branch == CSRF and ctx.url in ctx.protected
                        and all(not isilow(o, ctx.attacker) for o in origins)):
                    parent.children.append(self._done(self.node("T-PruneOChk", c, session, pc), session, pc))
                    return session, pc
                n = self.node("T-OChk", c, session, pc)
                parent.children.append(n)
                s_out, _ = self.cmd(session, pc, body, n)
                return self._done(n, s_out, pc) and (s_out, pc)
            case Reply():
                n = self.node("T-Reply", c, session, pc)
                parent.children.append(n)
                try:
                    self.t_reply(session, pc, c)
                except Reject as rj:
                    self._fail(n, rj)
                return self._done(n, session, pc) and (session, pc)
            case Redirect():
                n = self.node("T-Redir", c, session, pc)
                parent.children.append(n)
                try:
                    self.t_redirect(session, pc, c)
                except Reject as rj:
                    self._fail(n, rj)
                return self._done(n, session, pc) and (session, pc)
        n = self.node("T-Skip", c, session, pc)
        parent.children.append(n)
        self._fail(n, Reject("T-Skip", c, f"no typing rule for {type(c).__name__}"))

    @staticmethod
    def _done(n: Derivation, session, pc):
        n.session_out, n.pc_out = session, pc
        return n

    @staticmethod
    def _fail(n: Derivation, rj: Reject):
        n.failed = True
        n.note = rj.message
        if rj.node is None or getattr(rj.node, "pos", -1) < 0:
            rj.node = None
        rj.derivation = n
        raise rj

    def guard(self, n, session, cond) -> Label:
        try:
            return self.expr(session, cond).label
        except Reject as rj:
            self._fail(n, rj)

    # -- individual rules
    def t_login(self, session, pc, c, u, pw, sid):
        ctx = self.ctx
        tu = ctx.bottom() if is_undef(u) else self.expr(session, u)
        pws = _cred_candidates(ctx, session, pw, "secret")
        sids = _cred_candidates(ctx, session, sid, "id")
        if not pws:
            raise Reject("T-Login", pw, "the password is not a credential")
        if not sids:
            raise Reject("T-Login", sid, "the session identifier is not a credential")
        last = None
        for lp in pws:
            for ls in sids:
                if not leq_conf(lp.conf, ls.conf):
                    last = ("the session identifier is less confidential than the password",
                            f"{ctx.fmt_c(lp.conf)} <=C {ctx.fmt_c(ls.conf)}")
                    continue
                src = join_i(join_i(tu.label.integ, lp.integ), pc)
                if not ileq(src, ls.integ):
                    last = ("user, password or pc have lower integrity than the session identifier",
                            f"{ctx.fmt(src)} <=I {ctx.fmt(ls.integ)}")
                    continue
                return
        raise Reject("T-Login", c, *last)

    def t_start(self, session, pc, c, e):
        ctx = self.ctx
        cands = _cred_candidates(ctx, session, e, "id")
        if not cands:
            t = self.expr(session, e)
            raise Reject("T-Start", c, f"session identifier of type {ctx.fmt(t)} is not a credential")
        last = None
        for l in cands:
            s_out = ctx.low() if isclow(l.conf, ctx.attacker) else l
            if ctx.branch == HON:
                if session is not None and not ileq(pc, session.integ):
                    last = ("ending a session in a low-integrity context",
                            f"{ctx.fmt(pc)} <=I {ctx.fmt(session.integ)}")
                    continue
                if not ileq(pc, s_out.integ):
                    last = ("starting a session in a low-integrity context",
                            f"{ctx.fmt(pc)} <=I {ctx.fmt(s_out.integ)}")
                    continue
            return s_out
        raise Reject("T-Start", c, *last)

    def t_auth(self, session, pc, c, args, lab):
        ctx = self.ctx
        if session is None:
            raise Reject("T-Auth", c, "authenticated event with no active session")
        acc = join_i(pc, session.integ)
        for a in args:
            t = ctx.bottom() if is_undef(a) else self.expr(session, a)
            acc = join_i(acc, t.label.integ)
        if isilow(acc, ctx.attacker) and not isilow(lab.integ, ctx.attacker):
            raise Reject("T-Auth", c, "the attacker can influence a high-integrity authenticated event",
                         f"isilow({ctx.fmt(acc)}) but not isilow({ctx.fmt(lab.integ)})")

    def t_tokenchk(self, session, pc, c, x, r, body, parent):
        ctx = self.ctx
        n = self.node("T-TChk", c, session, pc)
        parent.children.append(n)
        try:
            if isinstance(r, SessionRef):
                rt = session_ref_type(ctx, session, r.ref, r, "T-TChk")
            elif isinstance(r, GlobalRef):
                rt = ctx.env.globals.get(r.ref)
                if rt is None:
                    raise Reject("T-TChk", r, f"global reference {r.ref} has no type")
            else:
                raise Reject("T-TChk", c, "the second operand of a token check must be a reference")
            if not is_cred(rt):
                raise Reject("T-TChk", c, f"token reference has non-credential type {ctx.fmt(rt)}")
            if ctx.branch == CSRF and not is_undef(x) and not isclow(rt.label.conf, ctx.attacker):
                tx = self.expr(session, x)
                if not equiv(tx.label.conf, rt.label.conf):
                    n.rule = "T-PruneTChk"
                    n.note = f"{ctx.fmt_c(tx.label.conf)} differs from secret {ctx.fmt_c(rt.label.conf)}"
                    return self._done(n, session, pc) and (session, pc)
            ok, tx = check_expr(ctx, session, x, rt)
            if not ok:
                raise Reject("T-TChk", c, f"token of type {ctx.fmt(tx)} does not match {ctx.fmt(rt)}",
                             f"{ctx.fmt(tx)} <= {ctx.fmt(rt)}")
        except Reject as rj:
            self._fail(n, rj)
        s_out, _ = self.cmd(session, pc, body, n)
        return self._done(n, s_out, pc) and (s_out, pc)

    def _binders(self, session, c, url: URL):
        ctx = self.ctx
        ut = ctx.env.urls.get(url)
        if ut is None:
            raise Reject(self.rule_of(c), c, f"no urltype for the current endpoint {url}")
        types = {}
        for x, e in c.binders:
            t = ctx.bottom() if is_undef(e) else self.expr(session, e)
            if not leq_conf(t.label.conf, ut.label.conf):
                raise Reject(self.rule_of(c), e, f"binder {x} of type {ctx.fmt(t)} is too confidential for the connection",
                             f"{ctx.fmt_c(t.label.conf)} <=C {ctx.fmt_c(ut.label.conf)}")
            if isilow(ut.label.integ, ctx.attacker) and not isclow(t.label.conf, ctx.attacker):
                raise Reject(self.rule_of(c), e, f"binder {x} is secret but the connection has low integrity")
            types[x] = t
        return ut, types

    @staticmethod
    def rule_of(c):
        return "T-Reply" if isinstance(c, Reply) else "T-Redir"

    def _zcheck(self, inner: "Checker", session, z, expected) -> tuple[bool, SecType | None]:
        e = z if isinstance(z, Var) else Val(z)
        return check_expr(inner.ctx, session, e, expected)

    def _cookies(self, inner: "Checker", session, c, pc):
        ctx = self.ctx
        rule = self.rule_of(c)
        for r, z in c.cookies:
            target = ctx.env.globals.get(r)
            if target is None:
                raise Reject(rule, c, f"cookie {r} has no type")
            if not ileq(pc, target.label.integ):
                raise Reject(rule, c, f"cookie {r} set under a pc of lower integrity",
                             f"{ctx.fmt(pc)} <=I {ctx.fmt(target.label.integ)}")
            ok, t = self._zcheck(inner, session, z, target)
            if not ok:
                raise Reject(rule, c, f"value of type {ctx.fmt(t)} cannot be stored in cookie {r} : {ctx.fmt(target)}",
                             f"{ctx.fmt(t)} <= {ctx.fmt(target)}")

    def t_reply(self, session, pc, c: Reply):
        ctx = self.ctx
        ut, types = self._binders(session, c, ctx.url)
        pc1 = join_i(pc, ut.reply)
        inner = Checker(replace(ctx, env=ctx.env.with_vars(types)), self.world)
        self._cookies(inner, session, c, pc1)
        type_script(inner.ctx, pc1, c.script)
        if ctx.branch == CSRF:
            for x in sorted(vars_of(c.script)):
                if x in types and not isclow(types[x].label.conf, ctx.attacker):
                    raise Reject("T-Reply", c, f"secret {x} disclosed to a script an attacker may include")
        if ctx.branch == HON:
            if not ileq(pc, ut.reply):
                raise Reject("T-Reply", c, "the reply is sent under a pc of lower integrity than expected",
                             f"{ctx.fmt(pc)} <=I {ctx.fmt(ut.reply)}")
            if c.page is not ERROR_PAGE:
                for tag, f in c.page.forms:
                    type_form(inner.ctx, pc1, tag, f)

    def t_redirect(self, session, pc, c: Redirect):
        ctx = self.ctx
        ut, types = self._binders(session, c, ctx.url)
        inner = Checker(replace(ctx, env=ctx.env.with_vars(types)), self.world)
        self._cookies(inner, session, c, pc)
        if ctx.branch == CSRF:
            for z in c.params:
                if isinstance(z, Var) and z.name in types and not isclow(types[z.name].label.conf, ctx.attacker):
                    raise Reject("T-Redir", c, f"secret {z.name} forwarded by a forgeable redirect")
        if c.url in ctx.protected:
            raise Reject("T-Redir", c, "redirect to a protected URL")
        target = ctx.env.urls.get(c.url)
        if target is None:
            raise Reject("T-Redir", c, f"redirect target {c.url} has no urltype")
        if not equiv(ut.reply, target.reply):
            raise Reject("T-Redir", c, "expected reply integrity differs from the target's",
                         f"{ctx.fmt(ut.reply)} = {ctx.fmt(target.reply)}")
        if isilow(target.label.integ, ctx.attacker):
            raise Reject("T-Redir", c, "redirect to a low-integrity URL")
        if ctx.branch == HON:
            if not ileq(pc, target.label.integ):
                raise Reject("T-Redir", c, "redirect under a pc of lower integrity than the target",
                             f"{ctx.fmt(pc)} <=I {ctx.fmt(target.label.integ)}")
            if len(c.params) != len(target.params):
                raise Reject("T-Redir", c, f"redirect passes {len(c.params)} parameters, target expects {len(target.params)}")
            for k, (z, t) in enumerate(zip(c.params, target.params), 1):
                ok, tz = self._zcheck(inner, session, z, t)
                if not ok:
                    raise Reject("T-Redir", c, f"parameter {k} of type {ctx.fmt(tz)} is not a subtype of {ctx.fmt(t)}")


def _same_session(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return label_equiv(a, b)


# ---------------------------------------------------------------- forms and scripts


def type_form(ctx: TypingCtx, pc, tag, form) -> None:
    """T-Form; raises :class:`Reject` on failure."""
    ut = ctx.env.urls.get(form.url)
    vt = ctx.env.forms.get(tag)
    if ut is None:
        raise Reject("T-Form", None, f"form target {form.url} has no urltype")
    if vt is None or not vt.matches(ut):
        raise Reject("T-Form", None, f"form {tag} does not carry the type of {form.url}")
    if isilow(ut.label.integ, ctx.attacker):
        raise Reject("T-Form", None, f"form {tag} targets a low-integrity URL")
    if not ileq(pc, ut.label.integ):
        raise Reject("T-Form", None, f"form {tag} produced under a pc of lower integrity than its target",
                     f"{ctx.fmt(pc)} <=I {ctx.fmt(ut.label.integ)}")
    if len(form.params) != len(ut.params):
        raise Reject("T-Form", None, f"form {tag} has {len(form.params)} parameters, {len(ut.params)} expected")
    for k, (z, t) in enumerate(zip(form.params, ut.params), 1):
        e = z if isinstance(z, Var) else Val(z)
        ok, tz = check_expr(ctx, None, e, t)
        if not ok:
            raise Reject("T-Form", None, f"form {tag} parameter {k} of type {ctx.fmt(tz)} is not a subtype of {ctx.fmt(t)}",
                         f"{ctx.fmt(tz)} <= {ctx.fmt(t)}")


def type_bexpr(ctx: TypingCtx, e) -> SecType:
    match e:
        case Val(v):
            if isinstance(v, Name):
                return v.ann
            return ctx.bottom()
        case Var(name):
            t = ctx.env.vars.get(name)
            if t is None:
                raise Reject("T-BEVar", e, f"variable {name} is not in scope")
            return t
        case CookieRef(r):
            t = ctx.env.globals.get(r)
            if t is None:
                raise Reject("T-BERef", e, f"cookie {r} has no type")
            return t
        case Dom():
            if ctx.branch == HON:
                raise Reject("T-BEDom", e, "honest scripts may not read the DOM")
            return Plain(ctx.attacker)
        case BinOp(op, a, b):
            ta, tb = type_bexpr(ctx, a), type_bexpr(ctx, b)
            if op != "=" and (is_cred(ta) or is_cred(tb)):
                raise Reject("T-BEBinOp", e, f"operator {op} applied to a credential")
            return Plain(label_join(ta.label, tb.label))
    raise Reject("T-BEVal", e, f"not a browser expression: {e!r}")


def check_bexpr(ctx, e, expected) -> tuple[bool, SecType | None]:
    if is_undef(e):
        return True, expected
    t = type_bexpr(ctx, e)
    return subtype(t, expected, ctx.attacker), t


def type_script(ctx: TypingCtx, pc, s) -> None:
    """Script typing in the context's branch; raises :class:`Reject`."""
    match s:
        case Skip():
            return
        case Seq(a, b):
            type_script(ctx, pc, a)
            type_script(ctx, pc, b)
            return
        case Assign(r, e):
            target = ctx.env.globals.get(r)
            if target is None:
                raise Reject("T-BAssign", s, f"cookie {r} has no type")
            ok, t = check_bexpr(ctx, e, target)
            if not ok:
                raise Reject("T-BAssign", s, f"value of type {ctx.fmt(t)} cannot be stored in cookie {r}")
            if not ileq(pc, target.label.integ):
                raise Reject("T-BAssign", s, f"script writes cookie {r} under a pc of lower integrity",
                             f"{ctx.fmt(pc)} <=I {ctx.fmt(target.label.integ)}")
            return
        case SetDom(tag, url, args):
            _script_call(ctx, pc, s, "T-BSetDom", url, args, tag)
            return
        case Include(url, args):
            _script_call(ctx, pc, s, "T-BInclude", url, args, None)
            return
    raise Reject("T-BSkip", s, f"not a script: {s!r}")


def _script_call(ctx, pc, s, rule, url, args, tag):
    ut = ctx.env.urls.get(url)
    if ut is None:
        raise Reject(rule, s, f"{url} has no urltype")
    if len(args) != len(ut.params):
        raise Reject(rule, s, f"{len(args)} arguments given, {len(ut.params)} expected")
    la = Plain(ctx.attacker)
    if ctx.branch != HON:
        for k, a in enumerate(args, 1):
            ok, t = check_bexpr(ctx, a, la)
            if not ok:
                raise Reject(rule, s, f"argument {k} of type {ctx.fmt(t)} may not reach the attacker",
                             f"{ctx.fmt(t)} <= {ctx.fmt(la)}")
        return
    if rule == "T-BSetDom":
        if not isinstance(tag, Val):
            raise Reject(rule, s, "the form tag must be a value")
        vt = ctx.env.forms.get(tag.value)
        if vt is None or not vt.matches(ut):
            raise Reject(rule, s, f"form {tag.value} does not carry the type of {url}")
    else:
        if isilow(ut.label.integ, ctx.attacker):
            raise Reject(rule, s, f"inclusion of the low-integrity URL {url}")
        if not equiv(ut.reply, pc):
            raise Reject(rule, s, "included script would run at a different pc",
                         f"{ctx.fmt(ut.reply)} = {ctx.fmt(pc)}")
        if url in ctx.protected:
            raise Reject(rule, s, f"inclusion of the protected URL {url}")
    if not ileq(pc, ut.label.integ):
        raise Reject(rule, s, "script call under a pc of lower integrity than its target",
                     f"{ctx.fmt(pc)} <=I {ctx.fmt(ut.label.integ)}")
    for k, (a, t) in enumerate(zip(args, ut.params), 1):
        ok, ta = check_bexpr(ctx, a, t)
        if not ok:
            raise Reject(rule, s, f"argument {k} of type {ctx.fmt(ta)} is not a subtype of {ctx.fmt(t)}")


# ---------------------------------------------------------------- endpoints


def _position(world, node) -> tuple[int, int, int]:
    pos = getattr(node, "pos", -1)
    if world is None or pos is None or pos < 0:
        return -1, 0, 0
    line, col = line_col(world.source, pos)
    return pos, line, col


def type_branch(ctx: TypingCtx, body, world=None, endpoint_name: str = ""):
    """Type ``body`` in one branch; returns (derivation, rejection or None)."""
    pc = ctx.env.urls[ctx.url].label.integ if ctx.branch == HON else ctx.universe.top_i()
    root = Derivation(f"branch:{ctx.branch}", getattr(body, "pos", -1), ctx.branch, None, pc)
    chk = Checker(ctx, world)
    try:
        s, p = chk.cmd(None, pc, body, root)
        root.session_out, root.pc_out = s, p
        return root, None
    except Reject as rj:
        node = rj.node if rj.node is not None else getattr(rj, "derivation", None)
        pos, line, col = _position(world, node)
        return root, Rejection(endpoint_name, ctx.branch, rj.rule, pos, line, col, rj.message, rj.query)


def type_endpoint(world, endpoint, attacker: Label | None = None, env: TypingEnv | None = None,
                  check_env: bool = True) -> TypingVerdict:
    env = world.env if env is None else env
    u = world.universe
    la = attacker_label(world.attacker, u) if attacker is None else attacker
    name = world.url_name(endpoint.url)
    printer = Printer(world)
    root = Derivation("T-Recv", endpoint.pos, "")
    rej = []

    def fail(msg, query=""):
        pos, line, col = _position(world, endpoint)
        rej.append(Rejection(name, "", "T-Recv", pos, line, col, msg, query))
        root.failed = True
        root.note = msg
        return TypingVerdict(name, REJECTED, rej, root)

    if check_env:
        report = check_wellformed_env(env, world, la)
        if not report.ok:
            return fail("typing environment is not well formed: " + "; ".join(map(str, report.violations)))
    ut = env.urls.get(endpoint.url)
    if ut is None:
        return fail(f"no urltype for {name}")
    if len(ut.params) != len(endpoint.params):
        return fail(f"endpoint takes {len(endpoint.params)} parameters, its urltype lists {len(ut.params)}")
    for r in endpoint.cookies:
        t = env.globals.get(r)
        if t is None:
            return fail(f"cookie {r} has no type")
        if not leq_conf(t.label.conf, ut.label.conf) or not ileq(ut.label.integ, t.label.integ):
            return fail(f"cookie {r} : {printer.sectype(t)} is inconsistent with the connection {printer.label(ut.label)}")

    for branch in (HON, CSRF):
        if branch == HON:
            vs = dict(zip(endpoint.params, ut.params))
        else:
            vs = {x: Plain(u.low()) for x in endpoint.params}
        ctx = TypingCtx(env.with_vars(vs), la, u, endpoint.url, branch, env.protected, printer)
        d, r = type_branch(ctx, endpoint.body, world, name)
        # the branch's top command node hangs directly below T-Recv
        root.children.extend(d.children)
        if r is not None:
            rej.append(r)
    return TypingVerdict(name, REJECTED if rej else WELL_TYPED, rej, root)


def type_cluster(world, attacker: Label | None = None, env: TypingEnv | None = None) -> ClusterVerdict:
    env = world.env if env is None else env
    out = ClusterVerdict()
    if not world.endpoints:
        return out
    la = attacker_label(world.attacker, world.universe) if attacker is None else attacker
    report = check_wellformed_env(env, world, la)
    out.env_violations = list(report.violations)
    for ep in world.endpoints:
        out.endpoints[world.url_name(ep.url)] = type_endpoint(world, ep, la, env, check_env=not report.ok)
    return out


# ---------------------------------------------------------------- rendering


def render_derivation(d: Derivation, printer: Printer | None = None, world=None) -> str:
    lines = []

    def lab(x):
        if x is None:
            return "x"
        if printer is None:
            return str(x)
        return printer.label(x) if isinstance(x, Label) else printer.simple(x, True)

    def walk(n: Derivation, depth: int):
        where = ""
        if world is not None and n.pos >= 0:
            where = f" @{line_col(world.source, n.pos)[0]}"
        ctx = ""
        if n.pc_in is not None:
            ctx = f"  ls={lab(n.session_in)} pc={lab(n.pc_in)}"
            if n.pc_out is not None:
                ctx += f"  ->  ls={lab(n.session_out)} pc={lab(n.pc_out)}"
        mark = "  FAILED" if n.failed else ""
        note = f"  ({n.note})" if n.note else ""
        tag = f"[{n.branch}] " if depth == 1 and n.branch else ""
        lines.append("  " * depth + tag + n.rule + where + ctx + mark + note)
        for ch in n.children:
            walk(ch, depth + 1)

    walk(d, 0)
    return "\n".join(lines)


def derivation_to_dict(d: Derivation, printer: Printer | None = None) -> dict:
    def lab(x):
        if x is None:
            return None
        if printer is None:
            return str(x)
        return printer.label(x) if isinstance(x, Label) else printer.simple(x, True)

    return {
        "rule": d.rule,
        "pos": d.pos,
        "branch": d.branch,
        "session_in": lab(d.session_in),
        "pc_in": lab(d.pc_in),
        "session_out": lab(d.session_out),
        "pc_out": lab(d.pc_out),
        "note": d.note,
        "failed": d.failed,
        "children": [derivation_to_dict(c, printer) for c in d.children],
    }


__all__ = [
    "HON", "CSRF", "WELL_TYPED", "REJECTED", "Reject", "Derivation", "Rejection",
    "TypingVerdict", "ClusterVerdict", "TypingCtx", "type_expr", "check_expr",
    "type_form", "type_script", "type_bexpr", "type_branch", "type_endpoint",
    "type_cluster", "render_derivation", "derivation_to_dict",
]
