"""Small-step semantics of browsers, servers and attacked web systems.

States are immutable snapshots; ``Engine.successors`` returns every
transition the rules permit from a state.  Honest runs pick transitions with
a fixed priority scheduler, exploration (see :mod:`websess.harness`) fans out
over all of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Iterable

from .labels import (
    URL, Atom, Label, C, I, attacker_label, cookie_label, isclow, isilow, leq_conf,
    subtype, url_label,
)
from .calculus.syntax import (
    ERROR_PAGE, EMPTY_PAGE, UNDEF, Assign, Auth, BinOp, CookieRef, Dom, Form, Fresh,
    GlobalRef, Halt, HaltAction, Identity, If, Include, Load, Login, Name, OriginCheck,
    Page, Prim, Redirect, Reply, Seq, SessionRef, SetDom, SetGlobal, SetSession, Skip,
    Start, Submit, TokenCheck, Val, Var, World, flatten_seq, free_names, substitute,
)

NO_SESSION = None  # second component of E before any start


class Stuck(Exception):
    """No rule applies; carries the rule that was attempted."""

    def __init__(self, rule: str, message: str):
        super().__init__(f"{rule}: {message}")
        self.rule = rule
        self.message = message
        self.thread = None  # (server index, thread) when a server thread is stuck


class NondeterminismError(RuntimeError):
    pass


# ---------------------------------------------------------------- events


@dataclass(frozen=True)
class Silent:
    def __str__(self):
        return "•"


SILENT = Silent()


@dataclass(frozen=True)
class ErrorEvt:
    def __str__(self):
        return "error"


ERROR = ErrorEvt()


@dataclass(frozen=True)
class AuthEvt:
    values: tuple
    browser: str
    account: str
    label: Label


@dataclass(frozen=True)
class ReqEvt:
    ident: str
    conn: Name
    url: URL
    params: tuple   # ((k, v), ...) sorted by k
    cookies: tuple  # ((r, v), ...) sorted by r
    origin: Atom | None


@dataclass(frozen=True)
class RespEvt:
    conn: Name
    url: URL
    redirect: URL | None
    params: tuple   # redirect parameters, positional
    cookies: tuple
    page: Any
    script: tuple   # flattened script commands


Event = Silent | ErrorEvt | AuthEvt | ReqEvt | RespEvt


def is_unattacked_event(e) -> bool:
    return isinstance(e, (Silent, ErrorEvt, AuthEvt))


# ---------------------------------------------------------------- frozen maps


def mget(m: tuple, k, default=UNDEF):
    for a, b in m:
        if a == k:
            return b
    return default


def mhas(m: tuple, k) -> bool:
    return any(a == k for a, _ in m)


def mset(m: tuple, k, v, sort: bool = False) -> tuple:
    out = [(a, b) for a, b in m if a != k]
    if sort:
        out.append((k, v))
        out.sort(key=lambda kv: kv[0])
        return tuple(out)
    # keep the original position when overwriting
    for idx, (a, _) in enumerate(m):
        if a == k:
            lst = list(m)
            lst[idx] = (k, v)
            return tuple(lst)
    return tuple(m) + ((k, v),)


def mmerge(m: tuple, upd: dict) -> tuple:
    d = dict(m)
    d.update(upd)
    return tuple(sorted(d.items()))


# ---------------------------------------------------------------- state


@dataclass(frozen=True)
class Conn:
    n: Name
    tab: int
    url: URL
    origin: Atom | None


@dataclass(frozen=True)
class BrowserState:
    ident: str
    conn: Conn | None = None
    jar: tuple = ()            # ((ref, value), ...) sorted
    pages: tuple = ()          # ((tab, (url, page)), ...) sorted
    task: tuple | None = None  # (tab, (cmd, ...))
    queue: ReqEvt | None = None
    actions: tuple = ()

    def idle(self) -> bool:
        return self.conn is None and self.task is None and self.queue is None


@dataclass(frozen=True)
class Thread:
    cmd: Any
    conn: Name
    url: URL
    ident: str
    origin: Atom | None
    gid: Name
    gmem: tuple = ()
    sid: Any = NO_SESSION


@dataclass(frozen=True)
class Database:
    """Global memories indexed by i and session memories indexed by j."""
    globals: tuple = ()
    sessions: tuple = ()


@dataclass(frozen=True)
class ServerState:
    name: str
    sessions: tuple = ()  # ((j, mem), ...) in creation order
    trust: tuple = ()     # ((j, identity), ...)
    threads: tuple = ()

    @property
    def database(self) -> Database:
        return Database(tuple((t.gid, t.gmem) for t in self.threads), self.sessions)


@dataclass(frozen=True)
class SystemState:
    browser: BrowserState
    servers: tuple
    knowledge: frozenset = frozenset()
    pending: ReqEvt | None = None  # A-Timeout buffer
    fresh: int = 0
    attacker_requests: int = 0

    def key(self):
        # the counter only picks ids for future names, so it is not state
        return (self.browser, self.servers, self.knowledge, self.pending, self.attacker_requests)

    def quiescent(self) -> bool:
        return (self.browser.idle() and self.pending is None
                and not any(s.threads for s in self.servers))


@dataclass(frozen=True)
class Transition:
    rule: str
    events: tuple
    state: SystemState
    prio: int = 0
    detail: str = ""


# ---------------------------------------------------------------- attacker moves


@dataclass(frozen=True)
class AtkRequest:
    ident: str
    url: URL
    params: tuple
    cookies: tuple = ()
    origin: Atom | None = None


@dataclass(frozen=True)
class AtkResponse:
    conn: Name
    redirect: URL | None = None
    params: tuple = ()
    cookies: tuple = ()
    page: Any = EMPTY_PAGE
    script: tuple = (Skip(),)


# ---------------------------------------------------------------- evaluation


def _binop(op: str, a, b):
    if op == "=":
        return Prim(a == b)
    if not (isinstance(a, Prim) and isinstance(b, Prim)):
        return UNDEF
    x, y = a.value, b.value
    if op in ("and", "or"):
        if isinstance(x, bool) and isinstance(y, bool):
            return Prim(x and y if op == "and" else x or y)
        return UNDEF
    if op == "+":
        if isinstance(x, bool) or isinstance(y, bool):
            return UNDEF
        if type(x) is type(y):
            return Prim(x + y)
        return UNDEF
    return UNDEF


class _Counter:
    __slots__ = ("n",)

    def __init__(self, n: int):
        self.n = n

    def name(self, prefix: str, ann=None) -> Name:
        self.n += 1
        return Name(f"{prefix}{self.n}", ann)


def _eval(e, gmem: tuple, smem: tuple | None, counter: _Counter):
    match e:
        case Val(v):
            return v
        case GlobalRef(r):
            return mget(gmem, r)
        case SessionRef(r):
            if smem is None:
                raise Stuck("SE-ReadSession", f"read of @sess {r} outside a session")
            return mget(smem, r)
        case Fresh(ann):
            return counter.name("f", ann)
        case BinOp(op, a, b):
            return _binop(op, _eval(a, gmem, smem, counter), _eval(b, gmem, smem, counter))
        case Var(x):
            raise Stuck("SE-Val", f"unbound variable {x}")
    raise Stuck("SE-Val", f"cannot evaluate {e!r}")


def eval_server_expr(db: Database, env: tuple, e, fresh: int = 0):
    """Evaluate ``e`` in environment ``env = (i, j)``; returns (value, counter)."""
    i, j = env
    gmem = mget(db.globals, i, ())
    smem = None if j is NO_SESSION else mget(db.sessions, j, ())
    c = _Counter(fresh)
    v = _eval(e, gmem, smem, c)
    return v, c.n


# ---------------------------------------------------------------- cookies


def cookie_filter(op: str, jar, url: URL, ck=None, *, cookie_labels: dict):
    """``get``: cookies attached to a request to ``url``; ``upd``: jar after a
    response from ``url`` setting ``ck``."""
    lu = url_label(url)
    jar = dict(jar)
    if op == "get":
        return {r: v for r, v in jar.items()
                if r in cookie_labels and leq_conf(C(cookie_labels[r]), C(lu))}
    if op == "upd":
        ok = {r: v for r, v in dict(ck or {}).items()
              if r in cookie_labels and leq_conf(I(cookie_labels[r]), I(lu))}
        jar.update(ok)
        return jar
    raise ValueError(f"unknown cookie_filter op {op!r}")


# ---------------------------------------------------------------- engine


def _comm_head(c):
    while isinstance(c, Seq):
        c = c.first
    return c if isinstance(c, (Reply, Redirect)) else None


def _halted(c) -> bool:
    while isinstance(c, Seq):
        c = c.first
    return isinstance(c, Halt)


def _replace_head(c, new):
    if isinstance(c, Seq):
        return Seq(_replace_head(c.first, new), c.second, c.pos)
    return new


def _finished(c) -> bool:
    return isinstance(c, (Halt, Skip)) or (isinstance(c, Seq) and _halted(c))


def _fmt_names(vals) -> set:
    return free_names(vals)


class Engine:
    """Rule interpreter for one world and one attacker."""

    def __init__(self, world: World, attacker: Label | None = None, hsts: Iterable[str] | None = None,
                 monitor: bool = False):
        self.world = world
        self.universe = world.universe
        if attacker is None and self.universe.domains:
            attacker = attacker_label(world.attacker, self.universe)
        self.attacker = attacker
        self.hsts = frozenset(self.universe.hsts if hsts is None else hsts)
        self.cookie_labels = {r: cookie_label(spec, self.universe, self.hsts)
                              for r, spec in world.cookies.items()}
        self.endpoints = {}
        for si, s in enumerate(world.servers):
            for e in s.endpoints:
                self.endpoints[e.url] = (si, e)
        self.passwords = {(who, url): n for (who, url), n in world.passwords.items()}
        self.atk_identities = tuple(world.attacker.identities) or ("atk",)
        self.monitor = monitor
        self.stuck: list[Stuck] = []
        self._leq_cache: dict = {}
        self._bodies: dict = {}

    # -- labels
    def _leq(self, a, b) -> bool:
        k = (a, b)
        r = self._leq_cache.get(k)
        if r is None:
            r = self._leq_cache[k] = leq_conf(a, b)
        return r

    def readable_by_attacker(self, url: URL) -> bool:
        return self.attacker is not None and self._leq(C(url_label(url)), self.attacker.conf)

    def writable_by_attacker(self, url: URL) -> bool:
        return self.attacker is not None and self._leq(I(url_label(url)), self.attacker.integ)

    def get_ck(self, jar: tuple, url: URL) -> tuple:
        cu = C(url_label(url))
        return tuple((r, v) for r, v in jar
                     if r in self.cookie_labels and self._leq(C(self.cookie_labels[r]), cu))

    def upd_ck(self, jar: tuple, url: URL, ck: tuple) -> tuple:
        iu = I(url_label(url))
        ok = {r: v for r, v in ck
              if r in self.cookie_labels and self._leq(I(self.cookie_labels[r]), iu)}
        return mmerge(jar, ok) if ok else jar

    def hsts_blocks(self, url: URL) -> bool:
        return url.scheme == "http" and url.domain in self.hsts

    # -- initial state
    def initial(self) -> SystemState:
        b = BrowserState(self.world.user, actions=tuple(self.world.actions))
        servers = tuple(ServerState(s.name) for s in self.world.servers)
        return SystemState(b, servers, frozenset(self.world.attacker.knowledge))

    # -- server
    def _recv(self, state: SystemState, req: ReqEvt, counter: _Counter) -> tuple:
        si, ep = self.endpoints[req.url]
        ck = dict(req.cookies)
        gmem = tuple(sorted((r, ck.get(r, UNDEF)) for r in ep.cookies))
        p = dict(req.params)
        args = tuple(p.get(k, UNDEF) for k in range(1, len(ep.params) + 1))
        body = self._bodies.get((req.url, args))
        if body is None:
            body = substitute(ep.body, dict(zip(ep.params, args)))
            if len(self._bodies) < 100_000:
                self._bodies[(req.url, args)] = body
        gid = counter.name("g")
        t = Thread(body, req.conn, req.url, req.ident, req.origin, gid, gmem)
        srv = state.servers[si]
        srv = replace(srv, threads=srv.threads + (t,))
        return state.servers[:si] + (srv,) + state.servers[si + 1:]

    def _thread_step(self, srv: ServerState, t: Thread, counter: _Counter):
        """One silent server step; returns (rule, events, server')."""
        h = t.cmd
        while isinstance(h, Seq):
            if isinstance(h.first, Skip):
                break
            h = h.first
        c = t.cmd
        if isinstance(h, Seq):  # skip; c'  at the head
            return "S-Skip", (SILENT,), self._put(srv, t, replace(t, cmd=_replace_seq_skip(c)))
        smem = None if t.sid is NO_SESSION else mget(srv.sessions, t.sid, ())
        ev = lambda e: _eval(e, t.gmem, smem, counter)  # noqa: E731
        match h:
            case SetGlobal(r, e):
                v = ev(e)
                t2 = replace(t, cmd=_replace_head(c, Skip()), gmem=mset(t.gmem, r, v, sort=True))
                return "S-SetGlobal", (SILENT,), self._put(srv, t, t2)
            case SetSession(r, e):
                if t.sid is NO_SESSION:
                    raise Stuck("S-SetSession", f"write to @sess {r} outside a session")
                v = ev(e)
                sessions = mset(srv.sessions, t.sid, mset(smem, r, v, sort=True))
                srv = replace(srv, sessions=sessions)
                return "S-SetSession", (SILENT,), self._put(srv, t, replace(t, cmd=_replace_head(c, Skip())))
            case If(cond, a, b):
                v = ev(cond)
                if v == Prim(True):
                    return "S-IfTrue", (SILENT,), self._put(srv, t, replace(t, cmd=_replace_head(c, a)))
                if v == Prim(False):
                    return "S-IfFalse", (SILENT,), self._put(srv, t, replace(t, cmd=_replace_head(c, b)))
                raise Stuck("S-If", f"condition evaluated to {v}, not a boolean")
            case Start(e):
                j = ev(e)
                t2 = replace(t, cmd=_replace_head(c, Skip()), sid=j)
                if mhas(srv.sessions, j):
                    return "S-RestoreSession", (SILENT,), self._put(srv, t, t2)
                srv = replace(srv, sessions=srv.sessions + ((j, ()),))
                return "S-NewSession", (SILENT,), self._put(srv, t, t2)
            case Login(eu, epw, eid):
                who = ev(eu)
                if not isinstance(who, Identity):
                    raise Stuck("S-Login", f"user {who} is not an identity")
                pw = ev(epw)
                expected = self.passwords.get((who.name, t.url))
                if expected is None or pw != expected:
                    raise Stuck("S-Login", f"wrong password for {who.name}")
                j = ev(eid)
                srv = replace(srv, trust=mset(srv.trust, j, who.name))
                return "S-Login", (SILENT,), self._put(srv, t, replace(t, cmd=_replace_head(c, Skip())))
            case Auth(args, lab):
                if t.sid is NO_SESSION or not mhas(srv.trust, t.sid):
                    raise Stuck("S-Auth", "session is not bound to an identity")
                vals = tuple(ev(a) for a in args)
                evt = AuthEvt(vals, t.ident, mget(srv.trust, t.sid), lab)
                return "S-Auth", (evt,), self._put(srv, t, replace(t, cmd=_replace_head(c, Skip())))
            case TokenCheck(a, b, body):
                if ev(a) == ev(b):
                    return "S-TChkSucc", (SILENT,), self._put(srv, t, replace(t, cmd=_replace_head(c, body)))
                err = Reply(ERROR_PAGE, Skip(), (), ())
                return "S-TChkFail", (ERROR,), self._put(srv, t, replace(t, cmd=_replace_head(c, err)))
            case OriginCheck(origins, body):
                if t.origin is not None and t.origin in origins:
                    return "S-OChkSucc", (SILENT,), self._put(srv, t, replace(t, cmd=_replace_head(c, body)))
                err = Reply(ERROR_PAGE, Skip(), (), ())
                return "S-OChkFail", (ERROR,), self._put(srv, t, replace(t, cmd=_replace_head(c, err)))
        raise Stuck("S-Seq", f"no rule for {type(h).__name__}")

    @staticmethod
    def _put(srv: ServerState, old: Thread, new: Thread) -> ServerState:
        threads = tuple(new if x is old else x for x in srv.threads)
        if _finished(new.cmd):
            # the thread and its global memory are unreachable from now on
            threads = tuple(x for x in threads if x is not new)
        return replace(srv, threads=threads)

    def _response(self, srv: ServerState, t: Thread, counter: _Counter) -> RespEvt:
        h = _comm_head(t.cmd)
        smem = None if t.sid is NO_SESSION else mget(srv.sessions, t.sid, ())
        sigma = {x: _eval(e, t.gmem, smem, counter) for x, e in h.binders}
        cks = []
        for r, z in h.cookies:
            v = _bind_z(z, sigma)
            cks.append((r, v))
        cks = tuple(sorted(dict(cks).items()))
        if isinstance(h, Reply):
            page = h.page if h.page is ERROR_PAGE else substitute(h.page, sigma)
            page = _close_page(page, sigma)
            script = tuple(flatten_seq(substitute(h.script, sigma)))
            return RespEvt(t.conn, t.url, None, (), cks, page, script)
        params = tuple(_bind_z(z, sigma) for z in h.params)
        return RespEvt(t.conn, t.url, h.url, params, cks, EMPTY_PAGE, (Skip(),))

    # -- browser
    def deliver(self, b: BrowserState, resp: RespEvt, counter: _Counter):
        """Browser receiving ``resp``; returns (rule, browser') or None."""
        conn = b.conn
        if conn is None or conn.n != resp.conn or conn.url != resp.url or b.queue is not None:
            return None
        jar = self.upd_ck(b.jar, resp.url, resp.cookies)
        if resp.redirect is not None:
            if b.task is not None:
                return None
            u2 = resp.redirect
            if self.hsts_blocks(u2):
                return None
            n2 = counter.name("n")
            o2 = conn.origin if conn.origin == resp.url.origin else None
            p = tuple((k, v) for k, v in enumerate(resp.params, 1))
            req = ReqEvt(b.ident, n2, u2, p, self.get_ck(jar, u2), o2)
            return "B-Redirect", replace(b, conn=Conn(n2, conn.tab, u2, o2), jar=jar, queue=req)
        if b.task is not None:
            tab, s = b.task
            if tab != conn.tab:
                return None
            return "B-RecvInclude", replace(b, conn=None, jar=jar, task=(tab, resp.script + s))
        pages = mset(b.pages, conn.tab, (resp.url, resp.page), sort=True)
        actions = b.actions
        if resp.page is ERROR_PAGE:
            actions = (HaltAction(),) + actions
        return "B-RecvLoad", replace(b, conn=None, jar=jar, pages=pages,
                                     task=(conn.tab, resp.script), actions=actions)

    def _beval(self, e, jar: tuple, page, lab: Label):
        match e:
            case Val(v):
                return v
            case CookieRef(r):
                if r not in self.cookie_labels:
                    raise Stuck("BE-Reference", f"unknown cookie {r}")
                if not self._leq(C(self.cookie_labels[r]), C(lab)):
                    raise Stuck("BE-Reference", f"cookie {r} is not readable here")
                return mget(jar, r)
            case Dom(a, k):
                tag = self._beval(a, jar, page, lab)
                idx = self._beval(k, jar, page, lab)
                f = page.get(tag) if isinstance(page, Page) else None
                if f is None:
                    raise Stuck("BE-Dom", f"no form {tag} in the page")
                if not (isinstance(idx, Prim) and type(idx.value) is int):
                    raise Stuck("BE-Dom", f"index {idx} is not an integer")
                if idx.value == 0:
                    return f.url
                if not 1 <= idx.value <= len(f.params):
                    raise Stuck("BE-Dom", f"index {idx} out of range")
                return f.params[idx.value - 1]
            case BinOp(op, a, b2):
                return _binop(op, self._beval(a, jar, page, lab), self._beval(b2, jar, page, lab))
            case Var(x):
                raise Stuck("BE-Val", f"unbound variable {x}")
        raise Stuck("BE-Val", f"cannot evaluate {e!r}")

    def _script_step(self, b: BrowserState, counter: _Counter):
        tab, s = b.task
        if not s or (len(s) == 1 and isinstance(s[0], Skip)):
            return "B-End", replace(b, task=None)
        h, rest = s[0], s[1:]
        if isinstance(h, Skip):
            return "B-Skip", replace(b, task=(tab, rest))
        if isinstance(h, Seq):
            return "B-Seq", replace(b, task=(tab, tuple(flatten_seq(h)) + rest))
        entry = mget(b.pages, tab, None)
        if entry is None:
            raise Stuck("B-Seq", f"no page in tab {tab}")
        url, page = entry
        lab = url_label(url)
        match h:
            case Assign(r, e):
                v = self._beval(e, b.jar, page, lab)
                if r not in self.cookie_labels or not self._leq(I(self.cookie_labels[r]), I(lab)):
                    raise Stuck("B-SetReference", f"cookie {r} is not writable from {url}")
                jar = mset(b.jar, r, v, sort=True)
                return "B-SetReference", replace(b, jar=jar, task=(tab, (Skip(),) + rest))
            case SetDom(tag, u, args):
                v = self._beval(tag, b.jar, page, lab)
                vals = tuple(self._beval(a, b.jar, page, lab) for a in args)
                forms = page.forms if isinstance(page, Page) else ()
                forms = tuple((t0, f) for t0, f in forms if t0 != v) + ((v, Form(u, vals)),)
                pages = mset(b.pages, tab, (url, Page(forms)), sort=True)
                return "B-SetDom", replace(b, pages=pages, task=(tab, (Skip(),) + rest))
            case Include(u, args):
                if self.hsts_blocks(u):
                    raise Stuck("B-Include", f"HSTS forbids {u}")
                p = tuple((k, self._beval(a, b.jar, page, lab)) for k, a in enumerate(args, 1))
                n = counter.name("n")
                req = ReqEvt(b.ident, n, u, p, self.get_ck(b.jar, u), url.origin)
                return "B-Include", replace(b, conn=Conn(n, tab, u, url.origin), queue=req,
                                            task=(tab, (Skip(),) + rest))
        raise Stuck("B-Seq", f"no rule for script command {type(h).__name__}")

    def _action_step(self, b: BrowserState, counter: _Counter):
        a = b.actions[0]
        rest = b.actions[1:]
        match a:
            case Load(tab, u, inputs):
                if self.hsts_blocks(u):
                    raise Stuck("B-Load", f"HSTS forbids {u}")
                n = counter.name("n")
                p = tuple(sorted(dict(inputs).items()))
                req = ReqEvt(b.ident, n, u, p, self.get_ck(b.jar, u), None)
                return "B-Load", replace(b, conn=Conn(n, tab, u, None), queue=req, actions=rest)
            case Submit(tab, u, tag, inputs):
                entry = mget(b.pages, tab, None)
                if entry is None or entry[0] != u:
                    raise Stuck("B-Submit", f"tab {tab} does not show {u}")
                page = entry[1]
                f = page.get(tag) if isinstance(page, Page) else None
                if f is None:
                    raise Stuck("B-Submit", f"no form {tag} in the page")
                if self.hsts_blocks(f.url):
                    raise Stuck("B-Submit", f"HSTS forbids {f.url}")
                given = dict(inputs)
                p = tuple((k, given.get(k, v)) for k, v in enumerate(f.params, 1))
                n = counter.name("n")
                req = ReqEvt(b.ident, n, f.url, p, self.get_ck(b.jar, f.url), u.origin)
                return "B-Submit", replace(b, conn=Conn(n, tab, f.url, u.origin), queue=req, actions=rest)
        raise Stuck("B-Load", "the next user action is halt")

    # -- knowledge
    def _learn(self, K: frozenset, url: URL, *parts) -> frozenset:
        if not self.readable_by_attacker(url):
            return K
        names = free_names(parts)
        return K | names if names - K else K

    # -- successors
    def successors(self, state: SystemState, attacked: bool = False, moves: Iterable = ()) -> list[Transition]:
        out: list[Transition] = []
        self.stuck = []
        b = state.browser

        # server threads: silent steps and responses
        for si, srv in enumerate(state.servers):
            for t in srv.threads:
                counter = _Counter(state.fresh)
                if _comm_head(t.cmd) is None:
                    try:
                        rule, evs, srv2 = self._thread_step(srv, t, counter)
                    except Stuck as e:
                        e.thread = (si, t)
                        self.stuck.append(e)
                        continue
                    servers = state.servers[:si] + (srv2,) + state.servers[si + 1:]
                    out.append(Transition(rule, evs, replace(state, servers=servers, fresh=counter.n), 0))
                    continue
                try:
                    resp = self._response(srv, t, counter)
                except Stuck as e:
                    e.thread = (si, t)
                    self.stuck.append(e)
                    continue
                srv2 = replace(srv, threads=tuple(x for x in srv.threads if x is not t))
                servers = state.servers[:si] + (srv2,) + state.servers[si + 1:]
                sname = "S-Reply" if resp.redirect is None else "S-Redirect"
                if b.conn is not None and b.conn.n == t.conn:
                    d = self.deliver(b, resp, counter)
                    if d is None:
                        continue
                    brule, b2 = d
                    K = self._learn(state.knowledge, resp.url, resp.cookies, resp.page, resp.script, resp.params)
                    st = replace(state, browser=b2, servers=servers, knowledge=K, fresh=counter.n)
                    out.append(Transition("A-SerBro", (SILENT,), st, 1, f"{sname}+{brule}"))
                elif attacked and t.conn in state.knowledge:
                    K = state.knowledge | free_names((resp.cookies, resp.page, resp.script, resp.params))
                    st = replace(state, servers=servers, knowledge=K, fresh=counter.n)
                    out.append(Transition("A-SerAtk", (resp,), st, 1, sname))

        # A-Timeout, second half
        if state.pending is not None:
            req = state.pending
            counter = _Counter(state.fresh)
            resp = RespEvt(req.conn, req.url, None, (), (), EMPTY_PAGE, (Skip(),))
            d = self.deliver(b, resp, counter)
            if d is not None:
                st = replace(state, browser=d[1], pending=None, fresh=counter.n)
                out.append(Transition("A-Timeout", (SILENT,), st, 1, f"recv+{d[0]}"))

        # browser: flushing the output queue
        if b.queue is not None and state.pending is None:
            req = b.queue
            b1 = replace(b, queue=None)
            if req.url in self.endpoints:
                counter = _Counter(state.fresh)
                servers = self._recv(state, req, counter)
                K = self._learn(state.knowledge, req.url, req.params, req.cookies)
                st = replace(state, browser=b1, servers=servers, knowledge=K, fresh=counter.n)
                out.append(Transition("A-BroSer", (SILENT,), st, 2, "B-Flush+S-Recv"))
            else:
                K = self._learn(state.knowledge, req.url, req.params, req.cookies)
                st = replace(state, browser=b1, knowledge=K, pending=req)
                out.append(Transition("A-Timeout", (SILENT,), st, 2, "send"))
            if attacked and self.writable_by_attacker(req.url):
                K = self._learn(state.knowledge, req.url, req.params, req.cookies) | {req.conn}
                out.append(Transition("A-BroAtk", (req,), replace(state, browser=b1, knowledge=K), 2, "B-Flush"))

        # browser: running script
        if b.task is not None and b.conn is None and b.queue is None:
            counter = _Counter(state.fresh)
            try:
                rule, b2 = self._script_step(b, counter)
                out.append(Transition("A-Nil", (SILENT,), replace(state, browser=b2, fresh=counter.n), 2, rule))
            except Stuck as e:
                self.stuck.append(e)

        # browser: next user action
        if b.idle() and b.actions and not isinstance(b.actions[0], HaltAction):
            counter = _Counter(state.fresh)
            try:
                rule, b2 = self._action_step(b, counter)
                out.append(Transition("A-Nil", (SILENT,), replace(state, browser=b2, fresh=counter.n), 3, rule))
            except Stuck as e:
                self.stuck.append(e)

        for m in moves:
            tr = self.apply_move(state, m)
            if tr is not None:
                out.append(tr)
        return out

    def drop_threads(self, state: SystemState, dead: Iterable) -> SystemState:
        """Remove threads no rule will ever move again."""
        servers = list(state.servers)
        for si, t in dead:
            srv = servers[si]
            servers[si] = replace(srv, threads=tuple(x for x in srv.threads if x is not t))
        return replace(state, servers=tuple(servers))

    def apply_move(self, state: SystemState, m) -> Transition | None:
        """Validate and apply an attacker-synthesized message."""
        K = state.knowledge
        if isinstance(m, AtkRequest):
            if m.ident == self.world.user or m.url not in self.endpoints:
                return None
            if not free_names((m.params, m.cookies)) <= K:
                return None
            counter = _Counter(state.fresh)
            n = counter.name("n")
            req = ReqEvt(m.ident, n, m.url, tuple(sorted(m.params)), tuple(sorted(m.cookies)), m.origin)
            servers = self._recv(state, req, counter)
            st = replace(state, servers=servers, knowledge=K | {n}, fresh=counter.n,
                         attacker_requests=state.attacker_requests + 1)
            return Transition("A-AtkSer", (req,), st, 4)
        if isinstance(m, AtkResponse):
            b = state.browser
            if b.conn is None or b.conn.n != m.conn or m.conn not in K:
                return None
            if not self.writable_by_attacker(b.conn.url):
                return None
            resp = RespEvt(m.conn, b.conn.url, m.redirect, tuple(m.params), tuple(sorted(m.cookies)),
                           m.page, tuple(m.script))
            if not free_names((resp.cookies, resp.page, resp.script, resp.params)) <= K:
                return None
            counter = _Counter(state.fresh)
            d = self.deliver(b, resp, counter)
            if d is None:
                return None
            return Transition("A-AtkBro", (resp,), replace(state, browser=d[1], fresh=counter.n), 1, d[0])
        raise TypeError(m)

    # -- monitor
    def monitor_check(self, state: SystemState) -> list[str]:
        out = []
        env = self.world.env
        for r, v in state.browser.jar:
            ann = getattr(v, "ann", None)
            t = env.globals.get(r)
            if ann is None or t is None or self.attacker is None:
                continue
            if not subtype(ann, t, self.attacker):
                out.append(f"cookie {r} holds {v} of type {ann}, not a subtype of {t}")
        return out

    # -- honest runs
    def run_honest(self, budget: int = 10_000, check_monitor: bool | None = None) -> "HonestRun":
        check_monitor = self.monitor if check_monitor is None else check_monitor
        state = self.initial()
        steps: list[Transition] = []
        monitor: list[str] = []
        nondet = None
        while True:
            succ = self.successors(state)
            if not succ:
                break
            if len(steps) >= budget:
                return HonestRun(steps, state, nondet, tuple(self.stuck), monitor, exhausted=True)
            best = min(t.prio for t in succ)
            cands = [t for t in succ if t.prio == best]
            if len(cands) > 1 and len({t.state.key() for t in cands}) > 1 and nondet is None:
                nondet = f"{len(cands)} enabled transitions at step {len(steps)}: " + \
                    ", ".join(f"{t.rule}/{t.detail}" for t in cands)
            tr = cands[0]
            steps.append(tr)
            state = tr.state
            if check_monitor:
                monitor += [f"step {len(steps)}: {m}" for m in self.monitor_check(state)]
        return HonestRun(steps, state, nondet, tuple(self.stuck), monitor)


def _replace_seq_skip(c):
    # S-Skip inside an S-Seq context
    if isinstance(c.first, Skip):
        return c.second
    return Seq(_replace_seq_skip(c.first), c.second, c.pos)


def _bind_z(z, sigma):
    if isinstance(z, Var):
        if z.name not in sigma:
            raise Stuck("S-Reply", f"unbound variable {z.name}")
        return sigma[z.name]
    if isinstance(z, Val):
        return z.value
    return z


def _close_page(page, sigma):
    if not isinstance(page, Page):
        return page
    forms = []
    for tag, f in page.forms:
        forms.append((tag, Form(f.url, tuple(_bind_z(z, sigma) for z in f.params))))
    return Page(tuple(forms))


@dataclass
class HonestRun:
    steps: list
    final: SystemState
    nondeterminism: str | None = None
    stuck: tuple = ()
    monitor: list = field(default_factory=list)
    exhausted: bool = False

    @property
    def events(self) -> list:
        return [e for t in self.steps for e in t.events]

    def errors(self) -> int:
        return sum(isinstance(e, ErrorEvt) for e in self.events)

    def terminated_regularly(self) -> bool:
        b = self.final.browser
        return (not self.exhausted and b.idle() and not b.actions
                and not any(s.threads for s in self.final.servers) and self.errors() == 0)


def run_honest(world: World, budget: int = 10_000, monitor: bool = False, attacker: Label | None = None) -> HonestRun:
    return Engine(world, attacker, monitor=monitor).run_honest(budget)


def step(engine: Engine, state: SystemState, rules: Iterable[str] | None = None,
         attacked: bool = False, moves: Iterable = ()) -> list[Transition]:
    succ = engine.successors(state, attacked, moves)
    if rules is None:
        return succ
    keep = set(rules)
    return [t for t in succ if t.rule in keep or t.detail.split("+")[-1] in keep]


# ---------------------------------------------------------------- trace dump


class TraceFormatter:
    def __init__(self, world: World):
        from .calculus.pretty import Printer

        self.p = Printer(world)

    def value(self, v) -> str:
        if isinstance(v, Name) and v.ann is None:
            return str(v)
        if isinstance(v, Name):
            return f"#{v.id}"
        return self.p.value(v)

    def origin(self, o) -> str:
        return "UNDEF" if o is None else str(o)

    def kv(self, items) -> str:
        return "{" + ", ".join(f"{k} -> {self.value(v)}" for k, v in items) + "}"

    def page(self, page) -> str:
        if page is ERROR_PAGE:
            return "error"
        items = []
        for tag, f in page.forms:
            items.append(f"{self.p.tag(tag) if hasattr(tag, 'value') else tag} -> form({self.p.url(f.url)}, "
                         f"[{', '.join(self.value(v) for v in f.params)}])")
        return "{" + ", ".join(items) + "}"

    def script(self, s) -> str:
        return "; ".join(self.p.script(x) for x in s) or "skip"

    def event(self, e) -> str:
        match e:
            case Silent():
                return "•"
            case ErrorEvt():
                return "error"
            case AuthEvt(vals, ib, is_, lab):
                return f"auth<{', '.join(self.value(v) for v in vals)}>@({ib}, {is_}) {self.p.label(lab)}"
            case ReqEvt(ident, n, u, p, ck, o):
                return f"req({ident}, {n}, {self.p.url(u)}, {self.kv(p)}, {self.kv(ck)}, {self.origin(o)})"
            case RespEvt(n, u, r, ps, ck, page, s):
                red = "UNDEF" if r is None else self.p.url(r)
                return (f"res({n}, {self.p.url(u)}, {red}, [{', '.join(self.value(v) for v in ps)}], "
                        f"{self.kv(ck)}, {self.page(page)}, {self.script(s)})")
        return str(e)

    def step(self, k: int, t: Transition) -> str:
        rule = t.rule + (f"[{t.detail}]" if t.detail else "")
        return f"{k:4d}  {rule:32s} " + " ".join(self.event(e) for e in t.events)


def dump_trace(world: World, steps: Iterable[Transition]) -> str:
    f = TraceFormatter(world)
    return "\n".join(f.step(k, t) for k, t in enumerate(steps, 1))
