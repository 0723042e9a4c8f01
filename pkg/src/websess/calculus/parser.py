"""Recursive-descent parser for ``.ws`` world files.

The grammar is documented in ``docs/dsl.md``.  Every AST node records the
byte offset of its first token; errors carry line and column.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..envcfg import TypingEnv, URLType
from ..labels import (
    URL, AttackerSpec, CookieSpec, Cred, HOST_PREFIX, Join, Label, LabelError,
    Meet, NO_PREFIX, Plain, SECURE_PREFIX, Universe, attacker_label, http, https,
    subtype,
)
from .syntax import (
    ERROR_PAGE, OPS, UNDEF, Assign, Auth, BinOp, CookieRef, Dom, Endpoint, Form,
    Fresh, GlobalRef, Halt, HaltAction, Identity, If, Include, Load, Login, Name,
    OriginCheck, Page, Prim, Redirect, Reply, Seq, Server, SessionRef, SetDom,
    SetGlobal, SetSession, Skip, Start, Submit, TokenCheck, USER, Val, Var, World,
)


class ParseError(Exception):
    def __init__(self, message: str, pos: int = -1, source: str = ""):
        self.message = message
        self.pos = pos
        self.line, self.col = line_col(source, pos) if pos >= 0 else (0, 0)
        where = f"{self.line}:{self.col}: " if pos >= 0 else ""
        super().__init__(where + message)


class LoadError(ParseError):
    """Well-formed syntax with an inconsistent meaning."""


def line_col(source: str, pos: int) -> tuple[int, int]:
    line = source.count("\n", 0, pos) + 1
    col = pos - (source.rfind("\n", 0, pos) + 1) + 1
    return line, col


# ---------------------------------------------------------------- lexer

_TOKEN = re.compile(r"""
    (?P<ws>\s+|//[^\n]*)
  | (?P<url>https?://[A-Za-z0-9_.-]+(?:/[A-Za-z0-9_./-]*)?)
  | (?P<string>"[^"\n]*")
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*'*)
  | (?P<sym>:=|->|\\/|/\\|[{}()\[\],;:=+@<\-\#])
""", re.VERBOSE)


@dataclass(frozen=True, slots=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(source: str) -> list[Token]:
    out, pos = [], 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", pos, source)
        kind = m.lastgroup
        if kind != "ws":
            out.append(Token(kind, m.group(), pos))
        pos = m.end()
    out.append(Token("eof", "", len(source)))
    return out


def parse_url_literal(text: str) -> URL:
    scheme, rest = text.split("://", 1)
    domain, _, path = rest.partition("/")
    return URL(scheme, domain, "/" + path)


# ---------------------------------------------------------------- parser

_ATTRS = ("secure", "host-prefix", "secure-prefix", "domain")


class Parser:
    def __init__(self, source: str, path: str | None = None):
        self.src = source
        self.path = path
        self.toks = tokenize(source)
        self.i = 0
        self.domains: list[str] = []
        self.groups: list[frozenset] = []
        self.hsts: set[str] = set()
        self.subs: set[tuple[str, str]] = set()
        self._universe: Universe | None = None
        self.labels: dict[str, Label] = {}
        self.urls: dict[str, URL] = {}
        self.attacker: tuple = ("network", None, None)
        self._attacker_set = False
        self.identities: list[str] = []
        self.knowledge: set[Name] = set()
        self.passwords: dict = {}
        self.password_pos: dict = {}
        self.urltypes: dict[URL, URLType] = {}
        self.formtypes: dict = {}
        self.cookie_decl: dict[str, tuple] = {}
        self.globals: dict = {}
        self.sessions: dict = {}
        self.protected: set[URL] = set()
        self.servers: list[Server] = []
        self.actions: list = []
        self.scope: list[set[str]] = []

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg: str, pos: int | None = None):
        return ParseError(msg, self.tok.pos if pos is None else pos, self.src)

    def load_error(self, msg: str, pos: int):
        return LoadError(msg, pos, self.src)

    def at(self, text: str) -> bool:
        t = self.tok
        return t.text == text and t.kind in ("sym", "ident")

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            shown = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {shown!r}")
        t = self.tok
        self.i += 1
        return t

    def ident(self, what: str = "identifier") -> Token:
        t = self.tok
        if t.kind != "ident":
            raise self.error(f"expected {what}, found {t.text or 'end of input'!r}")
        self.i += 1
        return t

    def comma_list(self, close: str, item):
        out = []
        if self.accept(close):
            return out
        while True:
            out.append(item())
            if self.accept(close):
                return out
            self.expect(",")

    # -- universe
    @property
    def universe(self) -> Universe:
        if self._universe is None:
            try:
                self._universe = Universe(tuple(self.domains), tuple(self.groups),
                                          frozenset(self.hsts), frozenset(self.subs))
            except LabelError as e:
                raise self.load_error(str(e), self.tok.pos) from None
        return self._universe

    def domain(self) -> str:
        t = self.ident("domain")
        if t.text not in self.domains:
            raise self.load_error(f"unknown domain {t.text!r}", t.pos)
        return t.text

    def _freeze_check(self, pos):
        if self._universe is not None:
            raise self.load_error("universe declarations must precede their first use", pos)

    # -- labels
    def simple(self, integ: bool):
        left = self.conj(integ)
        while self.accept("\\/"):
            left = Join(left, self.conj(integ))
        return left

    def conj(self, integ: bool):
        left = self.atom(integ)
        while self.accept("/\\"):
            left = Meet(left, self.atom(integ))
        return left

    def atom(self, integ: bool):
        t = self.tok
        if t.kind == "ident" and t.text in ("HTTP", "HTTPS"):
            self.i += 1
            self.expect("(")
            d = self.domain()
            self.expect(")")
            return http(d) if t.text == "HTTP" else https(d)
        if t.kind == "ident" and t.text in ("BOT", "TOP"):
            self.i += 1
            u = self.universe
            if not u.domains:
                raise self.load_error("BOT/TOP need a non-empty domain universe", t.pos)
            bot = t.text == "BOT"
            if integ:
                return u.bottom_i() if bot else u.top_i()
            return u.bottom_c() if bot else u.top_c()
        if self.accept("("):
            s = self.simple(integ)
            self.expect(")")
            return s
        raise self.error("expected a simple label")

    def label(self) -> Label:
        t = self.tok
        if t.kind == "ident":
            self.i += 1
            if t.text == "low":
                return self.universe.low()
            if t.text not in self.labels:
                raise self.load_error(f"unknown label {t.text!r}", t.pos)
            return self.labels[t.text]
        self.expect("(")
        c = self.simple(False)
        self.expect(";")
        i = self.simple(True)
        self.expect(")")
        return Label(c, i)

    def sectype(self):
        if self.accept("cred"):
            return Cred(self.label())
        return Plain(self.label())

    def urltriple(self) -> URLType:
        self.expect("(")
        l = self.label()
        self.expect(",")
        self.expect("[")
        ps = self.comma_list("]", self.sectype)
        self.expect(",")
        r = self.simple(True)
        self.expect(")")
        return URLType(l, tuple(ps), r)

    # -- references to declared things
    def urlref(self) -> URL:
        t = self.tok
        if t.kind == "url":
            self.i += 1
            u = parse_url_literal(t.text)
            self.check_url(u, t.pos)
            return u
        t = self.ident("url name")
        if t.text not in self.urls:
            raise self.load_error(f"unknown url {t.text!r}", t.pos)
        return self.urls[t.text]

    def check_url(self, u: URL, pos: int):
        if u.domain not in self.domains:
            raise self.load_error(f"unknown domain {u.domain!r}", pos)

    def name_literal(self) -> Name:
        self.expect("#")
        lab = self.label()
        self.expect(":")
        idt = self.ident("name id")
        return Name(idt.text, Cred(lab))

    def tag(self):
        t = self.tok
        if t.kind == "ident":
            self.i += 1
            return Prim(t.text)
        if t.kind == "string":
            self.i += 1
            return Prim(t.text[1:-1])
        if t.kind == "int":
            self.i += 1
            return Prim(int(t.text))
        raise self.error("expected a form tag")

    # -- top level
    def parse(self) -> World:
        while self.tok.kind != "eof":
            self.decl()
        return self.finish()

    def decl(self):
        t = self.ident("declaration")
        kw = t.text
        handler = getattr(self, "d_" + kw.replace("-", "_"), None)
        if handler is None:
            raise self.error(f"unknown declaration {kw!r}", t.pos)
        handler(t)

    def end_decl(self):
        self.accept(";")

    def d_domains(self, t):
        self._freeze_check(t.pos)
        self.expect("{")
        for d in self.comma_list("}", lambda: self.ident("domain")):
            if d.text in self.domains:
                raise self.load_error(f"duplicate domain {d.text!r}", d.pos)
            self.domains.append(d.text)
        self.end_decl()

    def d_related(self, t):
        self._freeze_check(t.pos)
        self.expect("{")
        self.groups.append(frozenset(self.comma_list("}", self.domain)))
        self.end_decl()

    def d_hsts(self, t):
        self._freeze_check(t.pos)
        self.expect("{")
        self.hsts.update(self.comma_list("}", self.domain))
        self.end_decl()

    def d_subdomain(self, t):
        self._freeze_check(t.pos)
        a = self.domain()
        self.expect("<")
        b = self.domain()
        self.subs.add((a, b))
        self.end_decl()

    def d_label(self, t):
        n = self.ident("label name")
        if n.text in self.labels or n.text == "low":
            raise self.load_error(f"duplicate label {n.text!r}", n.pos)
        self.expect("=")
        self.labels[n.text] = self.label()
        self.end_decl()

    def d_url(self, t):
        n = self.ident("url name")
        if n.text in self.urls:
            raise self.load_error(f"duplicate url {n.text!r}", n.pos)
        self.expect("=")
        ut = self.tok
        if ut.kind != "url":
            raise self.error("expected a url literal")
        self.i += 1
        u = parse_url_literal(ut.text)
        self.check_url(u, ut.pos)
        self.urls[n.text] = u
        self.end_decl()

    def d_attacker(self, t):
        if self._attacker_set:
            raise self.load_error("duplicate attacker declaration", t.pos)
        self._attacker_set = True
        k = self.ident("attacker kind")
        dom, lab = None, None
        if k.text in ("web", "related"):
            self.expect("(")
            dom = self.domain()
            self.expect(")")
        elif k.text == "custom":
            self.expect("(")
            lab = self.label()
            self.expect(")")
        elif k.text != "network":
            raise self.error(f"unknown attacker kind {k.text!r}", k.pos)
        if self.accept("{"):
            while not self.accept("}"):
                kw = self.ident("attacker item")
                if kw.text == "identity":
                    idt = self.ident("identity")
                    if idt.text == USER or idt.text in self.identities:
                        raise self.load_error(f"bad attacker identity {idt.text!r}", idt.pos)
                    self.identities.append(idt.text)
                elif kw.text == "knows":
                    self.knowledge.add(self.name_literal())
                else:
                    raise self.error(f"unknown attacker item {kw.text!r}", kw.pos)
                self.end_decl()
        self.attacker = (k.text, dom, lab)
        self.end_decl()

    def d_password(self, t):
        who = self.ident("identity")
        self.expect("@")
        u = self.urlref()
        self.expect("=")
        n = self.name_literal()
        key = (who.text, u)
        if key in self.passwords:
            raise self.load_error("duplicate password entry", who.pos)
        self.passwords[key] = n
        self.password_pos[key] = who.pos
        self.end_decl()

    def d_urltype(self, t):
        u = self.urlref()
        self.expect(":")
        if u in self.urltypes:
            raise self.load_error(f"duplicate urltype for {u}", t.pos)
        self.urltypes[u] = self.urltriple()
        self.end_decl()

    def d_formtype(self, t):
        tag = self.tag()
        self.expect(":")
        if self.at("("):
            ut = self.urltriple()
        else:
            u = self.urlref()
            if u not in self.urltypes:
                raise self.load_error(f"formtype refers to {u} before its urltype", t.pos)
            ut = self.urltypes[u]
        if tag in self.formtypes:
            raise self.load_error(f"duplicate formtype {tag}", t.pos)
        self.formtypes[tag] = ut
        self.end_decl()

    def d_cookie(self, t):
        n = self.ident("cookie name")
        self.expect(":")
        ty = self.sectype()
        on = None
        if self.accept("on"):
            on = self.domain()
        attrs = {}
        if self.accept("attrs"):
            self.expect("{")
            for a, v, p in self.comma_list("}", self.cookie_attr):
                if a in attrs:
                    raise self.load_error(f"duplicate cookie attribute {a!r}", p)
                attrs[a] = v
        if n.text in self.cookie_decl or n.text in self.globals:
            raise self.load_error(f"duplicate reference {n.text!r}", n.pos)
        self.cookie_decl[n.text] = (on, attrs, n.pos)
        self.globals[n.text] = ty
        self.end_decl()

    def cookie_attr(self):
        start = self.tok.pos
        parts = [self.ident("cookie attribute").text]
        while self.accept("-"):
            parts.append(self.ident("cookie attribute").text)
        a = "-".join(parts)
        if a not in _ATTRS:
            raise self.error(f"unknown cookie attribute {a!r}", start)
        v = True
        if a == "domain":
            self.expect("=")
            v = self.domain()
        return a, v, start

    def d_glob(self, t):
        n = self.ident("reference")
        self.expect(":")
        if n.text in self.globals:
            raise self.load_error(f"duplicate reference {n.text!r}", n.pos)
        self.globals[n.text] = self.sectype()
        self.end_decl()

    def d_sess(self, t):
        n = self.ident("reference")
        self.expect(":")
        if n.text in self.sessions:
            raise self.load_error(f"duplicate session reference {n.text!r}", n.pos)
        self.sessions[n.text] = self.sectype()
        self.end_decl()

    def d_protected(self, t):
        self.expect("{")
        self.protected.update(self.comma_list("}", self.urlref))
        self.end_decl()

    def d_server(self, t):
        n = self.ident("server name")
        if any(s.name == n.text for s in self.servers):
            raise self.load_error(f"duplicate server {n.text!r}", n.pos)
        self.expect("{")
        eps = []
        while not self.accept("}"):
            eps.append(self.endpoint())
        self.servers.append(Server(n.text, tuple(eps)))
        self.end_decl()

    def d_user(self, t):
        self.expect("{")
        while not self.accept("}"):
            self.actions.append(self.action())
            self.end_decl()
        self.end_decl()

    # -- endpoints and commands
    def endpoint(self) -> Endpoint:
        start = self.expect("listen").pos
        self.expect("(")
        u = self.urlref()
        self.expect(")")
        self.expect("[")
        cks = self.comma_list("]", lambda: self.ident("cookie").text)
        self.expect("(")
        ps = self.comma_list(")", lambda: self.ident("parameter").text)
        if len(set(ps)) != len(ps):
            raise self.load_error("duplicate parameter names", start)
        self.expect("{")
        first = self.tok.pos
        self.scope = [set(ps)]
        body = self.cmd_seq("}")
        last = self.toks[self.i - 1].pos
        self.expect("}")
        span = (line_col(self.src, first)[0], line_col(self.src, last)[0])
        return Endpoint(u, tuple(cks), tuple(ps), body, start, span)

    def cmd_seq(self, close: str):
        cmds = []
        while not self.at(close):
            cmds.append(self.cmd())
            if not self.accept(";"):
                break
        if not cmds:
            return Skip(self.tok.pos)
        out = cmds[-1]
        for c in reversed(cmds[:-1]):
            out = Seq(c, out, c.pos)
        return out

    def block(self):
        self.expect("{")
        c = self.cmd_seq("}")
        self.expect("}")
        return c

    def cmd(self):
        t = self.tok
        p = t.pos
        if self.accept("skip"):
            return Skip(p)
        if self.accept("halt"):
            return Halt(p)
        if self.at("@"):
            sig = self.peek().text
            if sig in ("glob", "sess"):
                self.i += 2
                r = self.ident("reference").text
                self.expect(":=")
                e = self.expr()
                return SetGlobal(r, e, p) if sig == "glob" else SetSession(r, e, p)
        if self.accept("if"):
            cond = self.expr()
            self.expect("then")
            then = self.block()
            orelse = Skip(self.tok.pos)
            if self.accept("else"):
                orelse = self.cmd() if self.at("if") else self.block()
            return If(cond, then, orelse, p)
        if self.accept("login"):
            self.expect("(")
            a = self.expr()
            self.expect(",")
            b = self.expr()
            self.expect(",")
            c = self.expr()
            self.expect(")")
            return Login(a, b, c, p)
        if self.accept("start"):
            self.expect("(")
            e = self.expr()
            self.expect(")")
            return Start(e, p)
        if self.accept("auth"):
            self.expect("(")
            args = self.comma_list(")", self.expr)
            self.expect("@")
            return Auth(tuple(args), self.label(), p)
        if self.accept("tokenchk"):
            self.expect("(")
            a = self.expr()
            self.expect(",")
            b = self.expr()
            self.expect(")")
            return TokenCheck(a, b, self.block(), p)
        if self.accept("originchk"):
            self.expect("(")
            self.expect("{")
            origins = self.comma_list("}", lambda: self.atom(True))
            self.expect(")")
            return OriginCheck(tuple(origins), self.block(), p)
        if self.accept("reply"):
            return self.reply(p)
        if self.accept("redirect"):
            return self.redirect(p)
        raise self.error(f"expected a command, found {t.text or 'end of input'!r}")

    def binders_after(self):
        """Parse the optional ``with`` clause ahead of the scoped parts."""
        # binders are written last but scope over what precedes them, so we
        # scan forward to collect the bound names first
        depth, j = 0, self.i
        while j < len(self.toks):
            tk = self.toks[j]
            if tk.kind == "sym" and tk.text in "({[":
                depth += 1
            elif tk.kind == "sym" and tk.text in ")}]":
                if depth == 0:
                    break
                depth -= 1
            elif depth == 0 and tk.kind == "sym" and tk.text == ";":
                break
            elif depth == 0 and tk.kind == "ident" and tk.text == "with":
                names, k = [], j + 1
                while self.toks[k].kind == "ident" and self.toks[k + 1].text == "=":
                    names.append(self.toks[k].text)
                    k += 2
                    # skip the expression
                    d2 = 0
                    while True:
                        tk2 = self.toks[k]
                        if tk2.kind == "eof":
                            break
                        if tk2.kind == "sym" and tk2.text in "({[":
                            d2 += 1
                        elif tk2.kind == "sym" and tk2.text in ")}]":
                            if d2 == 0:
                                break
                            d2 -= 1
                        elif d2 == 0 and tk2.text in (",", ";"):
                            break
                        k += 1
                    if self.toks[k].text != ",":
                        break
                    k += 1
                return names
            j += 1
        return []

    def parse_binders(self, names):
        binders = []
        if self.accept("with"):
            while True:
                x = self.ident("binder variable")
                self.expect("=")
                binders.append((x.text, self.expr()))
                if not self.accept(","):
                    break
        got = [x for x, _ in binders]
        if len(set(got)) != len(got):
            raise self.load_error("binder variables must be distinct", self.tok.pos)
        if got != names:
            raise self.error("malformed with clause")
        return tuple(binders)

    def reply(self, p):
        names = self.binders_after()
        self.scope.append(set(names))
        self.expect("(")
        page = self.page()
        self.expect(")")
        self.expect("{")
        script = self.script_seq("}")
        self.expect("}")
        ck = self.ckmap()
        self.scope.pop()
        return Reply(page, script, ck, self.parse_binders(names), p)

    def redirect(self, p):
        names = self.binders_after()
        self.scope.append(set(names))
        self.expect("(")
        u = self.urlref()
        self.expect(",")
        self.expect("[")
        zs = self.comma_list("]", self.zvalue)
        self.expect(")")
        ck = self.ckmap()
        self.scope.pop()
        return Redirect(u, tuple(zs), ck, self.parse_binders(names), p)

    def ckmap(self):
        self.expect("{")

        def item():
            r = self.ident("cookie").text
            self.expect("->")
            return (r, self.zvalue())

        items = self.comma_list("}", item)
        if len({r for r, _ in items}) != len(items):
            raise self.load_error("duplicate cookie in map", self.tok.pos)
        return tuple(items)

    def page(self):
        if self.accept("error"):
            return ERROR_PAGE
        self.expect("{")

        def item():
            tag = self.tag()
            self.expect("->")
            self.expect("form")
            self.expect("(")
            u = self.urlref()
            self.expect(",")
            self.expect("[")
            zs = self.comma_list("]", self.zvalue)
            self.expect(")")
            return (tag, Form(u, tuple(zs)))

        forms = self.comma_list("}", item)
        if len({t for t, _ in forms}) != len(forms):
            raise self.load_error("duplicate form tag", self.tok.pos)
        return Page(tuple(forms))

    def in_scope(self, x: str) -> bool:
        return any(x in s for s in self.scope)

    def resolve_ident(self, t: Token, allow_var: bool = True):
        x = t.text
        if allow_var and self.in_scope(x):
            return Var(x, t.pos)
        if x == USER or x in self.identities:
            return Identity(x)
        if x in self.urls:
            return self.urls[x]
        raise self.load_error(f"unbound binder variable {x!r}", t.pos)

    def literal(self):
        t = self.tok
        if t.kind == "int":
            self.i += 1
            return Prim(int(t.text))
        if t.kind == "string":
            self.i += 1
            return Prim(t.text[1:-1])
        if t.kind == "url":
            self.i += 1
            u = parse_url_literal(t.text)
            self.check_url(u, t.pos)
            return u
        if t.kind == "ident" and t.text in ("true", "false"):
            self.i += 1
            return Prim(t.text == "true")
        if t.kind == "ident" and t.text == "UNDEF":
            self.i += 1
            return UNDEF
        if t.kind == "sym" and t.text == "#":
            raise self.load_error("name literals are only allowed in attacker knowledge, passwords and user inputs", t.pos)
        return None

    def zvalue(self):
        v = self.literal()
        if v is not None:
            return v
        r = self.resolve_ident(self.ident("value or variable"))
        return r

    # expressions: or < and < = < +
    def expr(self, browser: bool = False):
        return self.e_or(browser)

    def _binary(self, op, sub, browser):
        left = sub(browser)
        while self.at(op):
            p = self.tok.pos
            self.i += 1
            left = BinOp(op, left, sub(browser), p)
        return left

    def e_or(self, b):
        return self._binary("or", self.e_and, b)

    def e_and(self, b):
        return self._binary("and", self.e_eq, b)

    def e_eq(self, b):
        return self._binary("=", self.e_add, b)

    def e_add(self, b):
        return self._binary("+", self.e_prim, b)

    def e_prim(self, browser: bool):
        t = self.tok
        p = t.pos
        if self.accept("("):
            e = self.expr(browser)
            self.expect(")")
            return e
        v = self.literal()
        if v is not None:
            return Val(v, p)
        if t.kind == "sym" and t.text == "@":
            sig = self.peek()
            self.i += 2
            r = self.ident("reference").text
            if browser and sig.text == "ck":
                return CookieRef(r, p)
            if not browser and sig.text == "glob":
                return GlobalRef(r, p)
            if not browser and sig.text == "sess":
                return SessionRef(r, p)
            raise self.error(f"reference sigil @{sig.text} not allowed here", p)
        if not browser and t.kind == "ident" and t.text == "fresh" and self.peek().text == "(":
            self.i += 1
            self.expect("(")
            lab = self.label()
            self.expect(")")
            return Fresh(Cred(lab), p)
        if browser and t.kind == "ident" and t.text == "dom" and self.peek().text == "(":
            self.i += 1
            self.expect("(")
            a = self.expr(True)
            self.expect(",")
            b = self.expr(True)
            self.expect(")")
            return Dom(a, b, p)
        r = self.resolve_ident(self.ident("expression"))
        return r if isinstance(r, Var) else Val(r, p)

    # scripts
    def script_seq(self, close: str):
        stmts = []
        while not self.at(close):
            stmts.append(self.sstmt())
            if not self.accept(";"):
                break
        if not stmts:
            return Skip(self.tok.pos)
        out = stmts[-1]
        for s in reversed(stmts[:-1]):
            out = Seq(s, out, s.pos)
        return out

    def sstmt(self):
        t = self.tok
        p = t.pos
        if self.accept("skip"):
            return Skip(p)
        if self.accept("include"):
            self.expect("(")
            u = self.urlref()
            self.expect(",")
            self.expect("[")
            args = self.comma_list("]", lambda: self.expr(True))
            self.expect(")")
            return Include(u, tuple(args), p)
        if self.accept("setdom"):
            self.expect("(")
            tag = self.expr(True)
            self.expect(",")
            u = self.urlref()
            self.expect(",")
            self.expect("[")
            args = self.comma_list("]", lambda: self.expr(True))
            self.expect(")")
            return SetDom(tag, u, tuple(args), p)
        r = self.ident("script statement")
        self.expect(":=")
        return Assign(r.text, self.expr(True), p)

    # user actions
    def action(self):
        t = self.ident("user action")
        if t.text == "halt":
            return HaltAction()
        if t.text not in ("load", "submit"):
            raise self.error(f"unknown user action {t.text!r}", t.pos)
        self.expect("(")
        tab = self.tok
        if tab.kind != "int":
            raise self.error("expected a tab number")
        self.i += 1
        self.expect(",")
        u = self.urlref()
        self.expect(",")
        tag = None
        if t.text == "submit":
            tag = self.tag()
            self.expect(",")
        self.expect("{")
        inputs = self.comma_list("}", self.user_input)
        keys = [k for k, _ in inputs]
        if len(set(keys)) != len(keys):
            raise self.load_error("duplicate input position", t.pos)
        self.expect(")")
        inputs = tuple(sorted(inputs, key=lambda kv: kv[0]))
        if t.text == "load":
            return Load(int(tab.text), u, inputs)
        return Submit(int(tab.text), u, tag, inputs)

    def user_input(self):
        k = self.tok
        if k.kind != "int":
            raise self.error("expected an input position")
        self.i += 1
        self.expect("->")
        pos = self.tok.pos
        if self.at("#"):
            n = self.name_literal()
            if n not in self.passwords.values():
                raise self.load_error(f"name {n} in user input is not a declared password", pos)
            v = [x for x in self.passwords.values() if x == n][0]
        else:
            v = self.literal()
            if v is None:
                v = self.resolve_ident(self.ident("input value"), allow_var=False)
        if self.accept(":"):
            ty = self.sectype()
            if isinstance(v, Name):
                raise self.load_error("name inputs carry their own annotation", pos)
            if not isinstance(v, (Prim, Identity)):
                raise self.load_error(f"cannot annotate {v}", pos)
            v = _annotate(v, ty)
        return (int(k.text), v)

    # -- assembly
    def finish(self) -> World:
        u = self.universe
        # without a declaration the attacker is the network attacker
        kind, dom, lab = self.attacker if self._attacker_set else ("network", None, None)
        spec = AttackerSpec(kind, dom, lab, frozenset(self.knowledge), tuple(self.identities))
        if u.domains:
            try:
                la = attacker_label(spec, u)
            except LabelError as e:
                raise self.load_error(str(e), 0) from None
            for n in sorted(self.knowledge, key=lambda n: n.id):
                if not subtype(n.ann, Plain(la), la):
                    raise self.load_error(f"attacker knowledge {n} is not at the attacker's level", 0)

        seen: dict[URL, int] = {}
        for s in self.servers:
            for e in s.endpoints:
                if e.url in seen:
                    raise self.load_error(f"duplicate endpoint {e.url}", e.pos)
                seen[e.url] = e.pos
        for key, pos in self.password_pos.items():
            who, url = key
            if url not in seen:
                raise self.load_error(f"password entry for {url}, which is not an endpoint", pos)
            if who != USER and who not in self.identities:
                raise self.load_error(f"unknown identity {who!r}", pos)

        cookies = {}
        for r, (on, attrs, pos) in self.cookie_decl.items():
            dom = on
            if dom is None:
                ds = {e.url.domain for s in self.servers for e in s.endpoints if r in e.cookies}
                if len(ds) != 1:
                    raise self.load_error(f"cannot infer the domain of cookie {r!r}; add 'on <domain>'", pos)
                dom = ds.pop()
            prefix = NO_PREFIX
            if attrs.get("host-prefix"):
                prefix = HOST_PREFIX
            if attrs.get("secure-prefix"):
                if prefix != NO_PREFIX:
                    raise self.load_error(f"cookie {r!r} has two prefixes", pos)
                prefix = SECURE_PREFIX
            try:
                cookies[r] = CookieSpec(dom, bool(attrs.get("secure")), attrs.get("domain"), prefix)
            except LabelError as e:
                raise self.load_error(f"ill-formed cookie {r!r}: {e}", pos) from None

        env = TypingEnv(dict(self.urltypes), {}, dict(self.globals), dict(self.sessions),
                        dict(self.formtypes), frozenset(self.protected))
        return World(u, dict(self.urls), tuple(self.servers), tuple(self.actions), spec,
                     dict(self.passwords), cookies, env, dict(self.labels), USER, self.src, self.path)


def _annotate(v, ty):
    if isinstance(v, Prim):
        return Prim(v.value, ty)
    if isinstance(v, Identity):
        return Identity(v.name, ty)
    raise TypeError(f"cannot annotate {v!r}")


def parse_world(text: str, path: str | None = None) -> World:
    """Parse a ``.ws`` world; the typing environment is ``world.env``."""
    return Parser(text, path).parse()


def load_world(path) -> World:
    from pathlib import Path

    p = Path(path)
    return parse_world(p.read_text(encoding="utf-8"), str(p))
