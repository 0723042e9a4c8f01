"""Printer producing ``.ws`` source that parses back to the same AST."""

from __future__ import annotations

import re

from ..labels import URL, Atom, Cred, HOST_PREFIX, Join, Label, Meet, SECURE_PREFIX
from .syntax import (
    ERROR_PAGE, UNDEF, Assign, Auth, BinOp, CookieRef, Dom, Fresh, GlobalRef, Halt,
    HaltAction, Identity, If, Include, Load, Login, Name, OriginCheck, Page, Prim,
    Redirect, Reply, Seq, SessionRef, SetDom, SetGlobal, SetSession, Skip, Start,
    Submit, TokenCheck, Val, Var, World,
)

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*'*\Z")


class Printer:
    def __init__(self, world: World):
        self.w = world
        self.u = world.universe
        self.url_names = {v: k for k, v in reversed(list(world.urls.items()))}

    # labels
    def simple(self, l, integ: bool) -> str:
        if self.u.domains:
            if integ:
                if l == self.u.bottom_i():
                    return "BOT"
                if l == self.u.top_i():
                    return "TOP"
            else:
                if l == self.u.bottom_c():
                    return "BOT"
                if l == self.u.top_c():
                    return "TOP"
        match l:
            case Atom(scheme, d):
                return f"{scheme.upper()}({d})"
            case Join(a, b):
                return f"({self.simple(a, integ)} \\/ {self.simple(b, integ)})"
            case Meet(a, b):
                return f"({self.simple(a, integ)} /\\ {self.simple(b, integ)})"
        raise TypeError(l)

    def label(self, l: Label, alias: bool = True) -> str:
        if alias:
            for k, v in self.w.labels.items():
                if v == l:
                    return k
            if self.u.domains and l == self.u.low():
                return "low"
        return f"({self.simple(l.conf, False)} ; {self.simple(l.integ, True)})"

    def sectype(self, t) -> str:
        if isinstance(t, Cred):
            return "cred " + self.label(t.label)
        return self.label(t.label)

    def urltype(self, ut) -> str:
        ps = ", ".join(self.sectype(t) for t in ut.params)
        return f"({self.label(ut.label)}, [{ps}], {self.simple(ut.reply, True)})"

    # values
    def url(self, u: URL) -> str:
        return self.url_names.get(u, str(u))

    def value(self, v) -> str:
        if v is UNDEF:
            return "UNDEF"
        if isinstance(v, Prim):
            return str(v)
        if isinstance(v, Identity):
            return v.name
        if isinstance(v, URL):
            return self.url(v)
        if isinstance(v, Name):
            return f"#{self.label(v.ann.label)}:{v.id}"
        raise TypeError(v)

    def z(self, z) -> str:
        return z.name if isinstance(z, Var) else self.value(z)

    def tag(self, t) -> str:
        if isinstance(t.value, str) and _IDENT.match(t.value):
            return t.value
        return str(t)

    def expr(self, e) -> str:
        match e:
            case Var(name):
                return name
            case Val(v):
                return self.value(v)
            case GlobalRef(r):
                return f"@glob {r}"
            case SessionRef(r):
                return f"@sess {r}"
            case CookieRef(r):
                return f"@ck {r}"
            case Fresh(ann):
                return f"fresh({self.label(ann.label)})"
            case Dom(a, b):
                return f"dom({self.expr(a)}, {self.expr(b)})"
            case BinOp(op, a, b):
                return f"({self.expr(a)} {op} {self.expr(b)})"
        raise TypeError(e)

    def exprs(self, es) -> str:
        return ", ".join(self.expr(e) for e in es)

    # commands
    def block(self, c, ind: int) -> str:
        return "{\n" + self.cmd(c, ind + 1) + "\n" + "  " * ind + "}"

    def cmd(self, c, ind: int) -> str:
        pad = "  " * ind
        match c:
            case Seq(a, b):
                return self.cmd(a, ind) + ";\n" + self.cmd(b, ind)
            case Skip():
                return pad + "skip"
            case Halt():
                return pad + "halt"
            case SetGlobal(r, e):
                return f"{pad}@glob {r} := {self.expr(e)}"
            case SetSession(r, e):
                return f"{pad}@sess {r} := {self.expr(e)}"
            case If(cond, then, orelse):
                out = f"{pad}if {self.expr(cond)} then {self.block(then, ind)}"
                if not isinstance(orelse, Skip):
                    out += f" else {self.block(orelse, ind)}"
                return out
            case Login(a, b, s):
                return f"{pad}login({self.expr(a)}, {self.expr(b)}, {self.expr(s)})"
            case Start(e):
                return f"{pad}start({self.expr(e)})"
            case Auth(args, lab):
                return f"{pad}auth({self.exprs(args)}) @ {self.label(lab)}"
            case TokenCheck(a, b, body):
                return f"{pad}tokenchk({self.expr(a)}, {self.expr(b)}) {self.block(body, ind)}"
            case OriginCheck(origins, body):
                os_ = ", ".join(self.simple(o, True) for o in origins)
                return f"{pad}originchk({{{os_}}}) {self.block(body, ind)}"
            case Reply(page, script, cks, binders):
                return (f"{pad}reply({self.page(page)}) {{{self.script(script)}}} "
                        f"{self.ckmap(cks)}{self.binders(binders)}")
            case Redirect(u, zs, cks, binders):
                zz = ", ".join(self.z(z) for z in zs)
                return f"{pad}redirect({self.url(u)}, [{zz}]) {self.ckmap(cks)}{self.binders(binders)}"
        raise TypeError(c)

    def binders(self, bs) -> str:
        if not bs:
            return ""
        return " with " + ", ".join(f"{x} = {self.expr(e)}" for x, e in bs)

    def ckmap(self, cks) -> str:
        return "{" + ", ".join(f"{r} -> {self.z(z)}" for r, z in cks) + "}"

    def page(self, p) -> str:
        if p is ERROR_PAGE:
            return "error"
        items = []
        for tag, f in p.forms:
            zz = ", ".join(self.z(z) for z in f.params)
            items.append(f"{self.tag(tag)} -> form({self.url(f.url)}, [{zz}])")
        return "{" + ", ".join(items) + "}"

    def script(self, s) -> str:
        match s:
            case Seq(a, b):
                return self.script(a) + "; " + self.script(b)
            case Skip():
                return "skip"
            case Assign(r, e):
                return f"{r} := {self.expr(e)}"
            case Include(u, args):
                return f"include({self.url(u)}, [{self.exprs(args)}])"
            case SetDom(tag, u, args):
                return f"setdom({self.expr(tag)}, {self.url(u)}, [{self.exprs(args)}])"
        raise TypeError(s)

    # actions
    def inputs(self, inputs) -> str:
        out = []
        for k, v in inputs:
            s = self.value(v)
            ann = getattr(v, "ann", None)
            if ann is not None and not isinstance(v, Name):
                s += " : " + self.sectype(ann)
            out.append(f"{k} -> {s}")
        return "{" + ", ".join(out) + "}"

    def action(self, a) -> str:
        match a:
            case HaltAction():
                return "halt"
            case Load(tab, u, inputs):
                return f"load({tab}, {self.url(u)}, {self.inputs(inputs)})"
            case Submit(tab, u, tag, inputs):
                return f"submit({tab}, {self.url(u)}, {self.tag(tag)}, {self.inputs(inputs)})"
        raise TypeError(a)

    # world
    def world(self) -> str:
        w, u = self.w, self.u
        out = []
        if u.domains:
            out.append(f"domains {{{', '.join(u.domains)}}};")
        for g in u.groups:
            out.append(f"related {{{', '.join(d for d in u.domains if d in g)}}};")
        if u.hsts:
            out.append(f"hsts {{{', '.join(d for d in u.domains if d in u.hsts)}}};")
        for a, b in sorted(u.subdomain_pairs):
            out.append(f"subdomain {a} < {b};")
        for k, v in w.labels.items():
            out.append(f"label {k} = {self.label(v, alias=False)};")
        for k, v in w.urls.items():
            out.append(f"url {k} = {v};")
        at = w.attacker
        head = {"web": f"web({at.domain})", "related": f"related({at.domain})",
                "network": "network"}.get(at.kind)
        if head is None:
            head = f"custom({self.label(at.label)})"
        items = [f"  identity {i};" for i in at.identities]
        items += [f"  knows {self.value(n)};" for n in sorted(at.knowledge, key=lambda n: n.id)]
        out.append(f"attacker {head} {{\n" + "\n".join(items) + ("\n" if items else "") + "};")
        for (who, url), n in w.passwords.items():
            out.append(f"password {who} @ {self.url(url)} = {self.value(n)};")
        env = w.env
        for url, ut in env.urls.items():
            out.append(f"urltype {self.url(url)} : {self.urltype(ut)};")
        for tag, ut in env.forms.items():
            out.append(f"formtype {self.tag(tag)} : {self.urltype(ut)};")
        for r, t in env.globals.items():
            spec = w.cookies.get(r)
            if spec is None:
                out.append(f"glob {r} : {self.sectype(t)};")
                continue
            attrs = []
            if spec.secure and spec.prefix not in (HOST_PREFIX, SECURE_PREFIX):
                attrs.append("secure")
            if spec.prefix == HOST_PREFIX:
                attrs.append("host-prefix")
            if spec.prefix == SECURE_PREFIX:
                attrs.append("secure-prefix")
            if spec.domain_attribute:
                attrs.append(f"domain = {spec.domain_attribute}")
            tail = f" attrs {{{', '.join(attrs)}}}" if attrs else ""
            out.append(f"cookie {r} : {self.sectype(t)} on {spec.domain}{tail};")
        for r, t in env.sessions.items():
            out.append(f"sess {r} : {self.sectype(t)};")
        if env.protected:
            names = sorted(self.url(x) for x in env.protected)
            out.append(f"protected {{{', '.join(names)}}};")
        for s in w.servers:
            eps = []
            for e in s.endpoints:
                eps.append(f"  listen({self.url(e.url)})[{', '.join(e.cookies)}]({', '.join(e.params)}) "
                           + self.block(e.body, 1))
            out.append(f"server {s.name} {{\n" + "\n".join(eps) + ("\n" if eps else "") + "}")
        if w.actions:
            acts = "\n".join(f"  {self.action(a)};" for a in w.actions)
            out.append("user {\n" + acts + "\n}")
        return "\n".join(out) + "\n"


def pretty_world(world: World) -> str:
    return Printer(world).world()


def pretty_cmd(world: World, c) -> str:
    return Printer(world).cmd(c, 0)


def pretty_expr(world: World, e) -> str:
    return Printer(world).expr(e)
