"""Bounded attacker exploration and the session-integrity verdict."""

from __future__ import annotations

import itertools
import re
import time
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Iterable

from .calculus.syntax import (
    UNDEF, Assign, Form, HaltAction, Identity, Include, Name, Page, Prim, Submit, Val, World,
    free_names,
)
from .engine import AtkRequest, AtkResponse, AuthEvt, Engine, SystemState, Transition
from .labels import URL, I, Label, isilow, label_equiv, url_label

VIOLATION = "violation"
NO_VIOLATION = "no-violation-within-bound"
EXHAUSTED = "bound-exhausted"

_FRESH_ID = re.compile(r"[fng]\d+\Z")


@dataclass(frozen=True)
class ExplorationBounds:
    """Limits that make the attacker search finite."""

    depth: int = 60              # transitions per trace, server-internal steps excluded
    max_msg: int = 2             # defined fields per synthesized message
    pool: tuple | None = None    # primitive values; None means the default pool
    max_branch: int = 10_000     # attacker moves considered per state
    max_requests: int = 1        # A-AtkSer uses per trace
    script_len: int = 1          # commands in a synthesized script
    max_states: int = 200_000    # distinct states before giving up
    forge_origins: bool = False  # let attacker requests carry honest origins

    def __post_init__(self):
        for f in ("max_msg", "max_branch", "script_len", "max_states"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be positive")
        if self.depth < 0 or self.max_requests < 0:
            raise ValueError("depth and max_requests must be non-negative")


def default_pool(world: World) -> tuple:
    ids = tuple(Identity(i) for i in world.attacker.identities)
    return (Prim(True), Prim(False), Prim(0), Prim(1)) + ids


# ---------------------------------------------------------------- projection


def project(trace: Iterable, identity: str, label: Label) -> list[AuthEvt]:
    out = []
    for e in trace:
        if isinstance(e, AuthEvt) and identity in (e.browser, e.account) and label_equiv(e.label, label):
            out.append(e)
    return out


def is_fresh_name(v) -> bool:
    return isinstance(v, Name) and bool(_FRESH_ID.match(v.id))


_ATOMIC = (Prim, Identity, URL, str, int, bool, type(None), type(UNDEF))
_FIELDS: dict = {}


def _field_names(cls) -> tuple:
    names = _FIELDS.get(cls)
    if names is None:
        names = _FIELDS[cls] = tuple(f.name for f in fields(cls) if f.name not in ("pos", "span", "ann"))
    return names


_STATIC: dict = {}


def _static(x) -> bool:
    """True when no run-generated name occurs in x (cached per object; the
    cache keeps x alive so ids are never reused)."""
    hit = _STATIC.get(id(x))
    if hit is not None and hit[0] is x:
        return hit[1]
    if len(_STATIC) > 500_000:
        _STATIC.clear()
    ok = not any(is_fresh_name(n) for n in free_names(x))
    _STATIC[id(x)] = (x, ok)
    return ok


class Canon:
    """Renames run-generated names by order of first occurrence."""

    def __init__(self):
        self.map: dict = {}

    def __call__(self, x):
        if isinstance(x, _ATOMIC):
            return x
        if isinstance(x, Name):
            if not is_fresh_name(x):
                return ("name", x.id)
            k = self.map.get(x.id)
            if k is None:
                k = self.map[x.id] = len(self.map)
            return ("fresh", k, x.ann)
        if isinstance(x, tuple):
            return tuple([self(y) for y in x])
        if isinstance(x, frozenset):
            static = sorted((y for y in x if not is_fresh_name(y)), key=repr)
            fresh = sorted((y for y in x if is_fresh_name(y)),
                           key=lambda y: (y.id not in self.map, self.map.get(y.id, 0), int(y.id[1:])))
            return ("set",) + tuple(self(y) for y in static + fresh)
        if is_dataclass(x) and not isinstance(x, type):
            if _static(x):
                return x
            return (type(x).__name__,) + tuple([self(getattr(x, f)) for f in _field_names(type(x))])
        return x

    def state(self, st: SystemState, actions_total: int):
        """Key of a state; user actions are always a suffix of the world's
        list, possibly behind a halt, so their length identifies them."""
        b = st.browser
        acts = (len(b.actions), bool(b.actions) and isinstance(b.actions[0], HaltAction))
        return (self(b.conn), self(b.jar), self(b.pages), self(b.task), self(b.queue), acts,
                self(st.servers), self(st.pending), self(st.knowledge), st.attacker_requests)


def canonicalize(events: Iterable) -> tuple:
    return Canon()(tuple(events))


def is_prefix(xs: tuple, ys: tuple) -> bool:
    return len(xs) <= len(ys) and ys[:len(xs)] == xs


# ---------------------------------------------------------------- synthesis


def _tuples(values: list, arity: int, max_defined: int):
    """Parameter tuples over values with at most max_defined non-UNDEF entries."""
    others = [v for v in values if v is not UNDEF]
    for k in range(0, min(arity, max_defined) + 1):
        for pos in itertools.combinations(range(arity), k):
            for vs in itertools.product(others, repeat=k):
                out = [UNDEF] * arity
                for p, v in zip(pos, vs):
                    out[p] = v
                yield tuple(out)


class Synthesizer:
    def __init__(self, engine: Engine, bounds: ExplorationBounds):
        self.e = engine
        self.w = engine.world
        self.b = bounds
        self.pool = tuple(bounds.pool) if bounds.pool is not None else default_pool(self.w)
        self.targets = [(ep.url, len(ep.params), ep.cookies) for s in self.w.servers for ep in s.endpoints]
        # tags the user may later submit on attacker-controlled pages
        self.dom_tags = sorted({a.tag for a in self.w.actions
                                if isinstance(a, Submit) and engine.writable_by_attacker(a.url)}, key=repr)
        origins = {ep_url.origin for ep_url, _, _ in self.targets}
        self.origins = (None,) + (tuple(sorted(origins, key=str)) if bounds.forge_origins else ())

    def values(self, K: frozenset) -> list:
        names = sorted((n for n in K if n.ann is not None), key=lambda n: n.id)
        return [UNDEF] + list(self.pool) + names

    def requests(self, state: SystemState) -> list:
        if state.attacker_requests >= self.b.max_requests or not self.may_request(state):
            return []
        vals = self.values(state.knowledge)
        out = []
        for ident in self.e.atk_identities:
            for url, arity, cks in self.targets:
                for slots in _tuples(vals, arity + len(cks), self.b.max_msg):
                    params = tuple((k, v) for k, v in enumerate(slots[:arity], 1) if v is not UNDEF)
                    cookies = tuple((r, v) for r, v in zip(cks, slots[arity:]) if v is not UNDEF)
                    for o in self.origins:
                        out.append(AtkRequest(ident, url, params, cookies, o))
        return out

    def may_request(self, state: SystemState) -> bool:
        b = state.browser
        if state.pending is not None or b.queue is not None or any(s.threads for s in state.servers):
            return False
        if b.conn is None:
            return b.task is None
        return b.conn.n in state.knowledge

    def responses(self, state: SystemState) -> list:
        b = state.browser
        if b.conn is None or b.conn.n not in state.knowledge or b.queue is not None:
            return []
        url = b.conn.url
        if not self.e.writable_by_attacker(url):
            return []
        n = b.conn.n
        vals = self.values(state.knowledge)
        settable = [r for r in sorted(self.e.cookie_labels)
                    if self.e._leq(I(self.e.cookie_labels[r]), I(url_label(url)))]
        bodies = [("none", None)]
        for u, arity, _ in self.targets:
            bodies.append(("include", (u, arity)))
            bodies.append(("redirect", (u, arity)))
        for tag in self.dom_tags:
            for u, arity, _ in self.targets:
                bodies.append(("form", (tag, u, arity)))
        if b.task is None:
            # a script runs on the attacker page only after a load
            for r in settable:
                bodies.append(("assign", r))
        out = []
        budget = self.b.max_msg
        for ck_slots in _tuples(vals, len(settable), budget):
            used = sum(v is not UNDEF for v in ck_slots)
            cookies = tuple((r, v) for r, v in zip(settable, ck_slots) if v is not UNDEF)
            left = budget - used
            for kind, arg in bodies:
                if kind == "none":
                    out.append(AtkResponse(n, cookies=cookies))
                elif kind == "redirect":
                    u, arity = arg
                    for ps in _tuples(vals, arity, left):
                        out.append(AtkResponse(n, redirect=u, params=ps, cookies=cookies))
                elif kind == "include":
                    u, arity = arg
                    for ps in _tuples(vals, arity, left):
                        s = (Include(u, tuple(Val(v) for v in ps)),)
                        out.append(AtkResponse(n, cookies=cookies, script=s))
                elif kind == "form":
                    tag, u, arity = arg
                    for ps in _tuples(vals, arity, left):
                        out.append(AtkResponse(n, cookies=cookies, page=Page(((tag, Form(u, ps)),))))
                elif kind == "assign" and left >= 1:
                    for v in vals[1:]:
                        out.append(AtkResponse(n, cookies=cookies, script=(Assign(arg, Val(v)),)))
                if len(out) >= self.b.max_branch:
                    return out[:self.b.max_branch]
        return out

    def moves(self, state: SystemState) -> list:
        return self.responses(state) + self.requests(state)


def synthesize_messages(engine: Engine, state: SystemState, bounds: ExplorationBounds | None = None) -> list:
    return Synthesizer(engine, bounds or ExplorationBounds()).moves(state)


# ---------------------------------------------------------------- verdict


@dataclass
class WitnessStep:
    rule: str
    detail: str
    events: tuple
    move: object = None


@dataclass
class IntegrityVerdict:
    status: str
    label: Label | None = None
    witness: list = field(default_factory=list)
    honest_projection: list = field(default_factory=list)
    attacked_projection: list = field(default_factory=list)
    diverging: AuthEvt | None = None
    states: int = 0
    truncated: int = 0
    complete_traces: int = 0
    elapsed: float = 0.0
    labels: list = field(default_factory=list)
    note: str = ""

    @property
    def violation(self) -> bool:
        return self.status == VIOLATION

    def trace(self) -> list:
        return [e for s in self.witness for e in s.events]


class _Found(Exception):
    def __init__(self, path, label, proj, event):
        self.path, self.label, self.proj, self.event = path, label, proj, event


class _Budget(Exception):
    pass


def relevant_labels(world: World, attacker: Label) -> list[Label]:
    return [l for l in world.auth_labels() if not isilow(I(l), attacker)]


def check_trace(events: Iterable, honest: dict, user: str) -> tuple | None:
    """First (label, projection, event) where the trace leaves the honest
    projections, or None."""
    proj = {k: [] for k in honest}
    for e in events:
        if not isinstance(e, AuthEvt):
            continue
        for k, (lab, h) in honest.items():
            if user in (e.browser, e.account) and label_equiv(e.label, lab):
                proj[k].append(e)
                if not is_prefix(canonicalize(proj[k]), h):
                    return lab, list(proj[k]), e
    return None


def check_session_integrity(world: World, bounds: ExplorationBounds | None = None,
                            attacker: Label | None = None) -> IntegrityVerdict:
    bounds = bounds or ExplorationBounds()
    t0 = time.perf_counter()
    engine = Engine(world, attacker)
    la = engine.attacker
    labels = relevant_labels(world, la) if la is not None else []
    honest_run = engine.run_honest(budget=max(10_000, bounds.depth * 100))
    honest_events = honest_run.events
    if honest_run.nondeterminism:
        return IntegrityVerdict(EXHAUSTED, note=f"honest run is not deterministic: {honest_run.nondeterminism}",
                                elapsed=time.perf_counter() - t0, labels=labels)
    honest = {}
    for k, lab in enumerate(labels):
        honest[k] = (lab, canonicalize(project(honest_events, world.user, lab)))
    honest_len = sum(1 for t in honest_run.steps if t.prio != 0)
    if honest_run.exhausted or honest_len > bounds.depth:
        return IntegrityVerdict(EXHAUSTED, honest_projection=_first(honest, honest_events, world),
                                note=f"the honest run needs {honest_len} steps, more than the depth bound {bounds.depth}",
                                elapsed=time.perf_counter() - t0, labels=labels)
    if not labels:
        return IntegrityVerdict(NO_VIOLATION, note="no auth label above the attacker's integrity",
                                elapsed=time.perf_counter() - t0, labels=labels)

    syn = Synthesizer(engine, bounds)
    seen: dict = {}
    stats = {"states": 0, "truncated": 0, "complete": 0}
    path: list[WitnessStep] = []

    def visit(state: SystemState, depth: int, proj: dict):
        # forced transitions: server internals and deliveries commute with every choice
        while True:
            succ = engine.successors(state, attacked=True)
            forced = [t for t in succ if t.prio <= 1]
            if not forced:
                dead = [e.thread for e in engine.stuck
                        if e.thread is not None and e.thread[1].ident != world.user]
                if dead:
                    # stuck attacker threads never answer; forget them
                    state = engine.drop_threads(state, dead)
                    continue
                break
            t = forced[0]
            if t.prio == 1:
                if depth == 0:
                    stats["truncated"] += 1
                    return
                depth -= 1
            # the caller unwinds the path, including these forced steps
            path.append(WitnessStep(t.rule, t.detail, t.events))
            proj = _extend(proj, t.events)
            state = t.state
            _check(proj)
        canon = Canon()
        key = (canon(tuple(e for k in sorted(proj) for e in proj[k])), canon.state(state, 0))
        if seen.get(key, -1) >= depth:
            return
        seen[key] = depth
        stats["states"] += 1
        if stats["states"] > bounds.max_states:
            raise _Budget()
        succ = engine.successors(state, attacked=True, moves=syn.moves(state))
        if not succ:
            stats["complete"] += 1
            return
        if depth == 0:
            stats["truncated"] += 1
            return
        for t in succ:
            mark = len(path)
            path.append(WitnessStep(t.rule, t.detail, t.events, _move_of(t)))
            p2 = _extend(proj, t.events)
            _check(p2)
            visit(t.state, depth - 1, p2)
            del path[mark:]

    def _extend(proj, events):
        if not any(isinstance(e, AuthEvt) for e in events):
            return proj
        out = {k: list(v) for k, v in proj.items()}
        for e in events:
            if isinstance(e, AuthEvt) and world.user in (e.browser, e.account):
                for k, (lab, _) in honest.items():
                    if label_equiv(e.label, lab):
                        out[k].append(e)
        return out

    def _check(proj):
        for k, (lab, h) in honest.items():
            if proj[k] and not is_prefix(canonicalize(proj[k]), h):
                raise _Found(list(path), lab, list(proj[k]), proj[k][-1])

    status, found = NO_VIOLATION, None
    try:
        visit(engine.initial(), bounds.depth, {k: [] for k in honest})
    except _Found as f:
        status, found = VIOLATION, f
    except _Budget:
        status = EXHAUSTED
    v = IntegrityVerdict(status, states=stats["states"], truncated=stats["truncated"],
                         complete_traces=stats["complete"], labels=labels,
                         elapsed=time.perf_counter() - t0)
    if found is not None:
        v.label = found.label
        v.witness = found.path
        v.attacked_projection = found.proj
        v.diverging = found.event
        v.honest_projection = project(honest_events, world.user, found.label)
    elif status == EXHAUSTED:
        v.note = f"state budget of {bounds.max_states} exhausted"
    if status == NO_VIOLATION and stats["complete"] == 0:
        v.status = EXHAUSTED
        v.note = "no trace was explored to completion"
    return v


def _first(honest, events, world):
    if not honest:
        return []
    lab = honest[0][0]
    return project(events, world.user, lab)


def _move_of(t: Transition):
    if t.rule == "A-AtkSer":
        req = t.events[0]
        return AtkRequest(req.ident, req.url, req.params, req.cookies, req.origin)
    if t.rule == "A-AtkBro":
        r = t.events[0]
        return AtkResponse(r.conn, r.redirect, r.params, r.cookies, r.page, r.script)
    return None


def replay(world: World, witness: list, attacker: Label | None = None) -> list:
    """Re-execute a witness from the initial state; returns the event list.

    Raises ValueError when a step cannot be reproduced."""
    engine = Engine(world, attacker)
    # two threads may take indistinguishable steps, so ambiguous matches are
    # explored depth-first until the whole witness fits
    stack = [(0, engine.initial(), [])]
    deepest = 0
    while stack:
        k, state, events = stack.pop()
        if k == len(witness):
            return events
        deepest = max(deepest, k)
        w = witness[k]
        moves = [w.move] if w.move is not None else []
        match = [t for t in engine.successors(state, attacked=True, moves=moves)
                 if t.rule == w.rule and t.detail == w.detail and t.events == w.events]
        seen = []
        for t in reversed(match):
            if t.state not in seen:
                seen.append(t.state)
                stack.append((k + 1, t.state, events + list(t.events)))
    w = witness[deepest]
    raise ValueError(f"witness step {deepest + 1} ({w.rule}) cannot be replayed")
