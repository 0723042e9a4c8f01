"""Abstract syntax of the web calculus and purely syntactic utilities."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any, Union

from ..labels import URL, Atom, Cred, Label, SecType

# ---------------------------------------------------------------- values


@dataclass(frozen=True, slots=True, eq=False)
class Prim:
    value: bool | int | str
    ann: SecType | None = None

    def _key(self):
        return (type(self.value).__name__, self.value)

    def __eq__(self, other):
        return isinstance(other, Prim) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __str__(self):
        if isinstance(self.value, bool):
            return "true" if self.value else "false"
        if isinstance(self.value, str):
            return '"' + self.value + '"'
        return str(self.value)


@dataclass(frozen=True, slots=True)
class Name:
    id: str
    ann: SecType = field(default=None, compare=False)

    def __str__(self):
        return f"#{self.id}"


@dataclass(frozen=True, slots=True)
class Identity:
    name: str
    ann: SecType | None = field(default=None, compare=False)

    def __str__(self):
        return self.name


class _Undef:
    __slots__ = ()
    ann = None

    def __repr__(self):
        return "UNDEF"

    __str__ = __repr__

    def __reduce__(self):
        return (_undef, ())


def _undef():
    return UNDEF


UNDEF = object.__new__(_Undef)

Value = Union[Prim, Name, Identity, URL, _Undef]
VALUE_TYPES = (Prim, Name, Identity, URL, _Undef)


def is_value(x) -> bool:
    return isinstance(x, VALUE_TYPES)


# ---------------------------------------------------------------- expressions


@dataclass(frozen=True, slots=True)
class Var:
    name: str
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class Val:
    value: Any
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class GlobalRef:
    ref: str
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class SessionRef:
    ref: str
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class Fresh:
    ann: Cred
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class BinOp:
    op: str
    left: Any
    right: Any
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class CookieRef:
    ref: str
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class Dom:
    tag: Any
    index: Any
    pos: int = field(default=-1, compare=False)


OPS = ("=", "and", "or", "+")

# ---------------------------------------------------------------- pages


@dataclass(frozen=True, slots=True)
class Form:
    url: URL
    params: tuple  # values or Var


@dataclass(frozen=True, slots=True)
class Page:
    forms: tuple = ()  # ((tag value, Form), ...)

    def get(self, tag):
        for t, f in self.forms:
            if t == tag:
                return f
        return None


class _ErrorPage:
    __slots__ = ()

    def __repr__(self):
        return "error"

    def __reduce__(self):
        return (_error_page, ())


def _error_page():
    return ERROR_PAGE


ERROR_PAGE = object.__new__(_ErrorPage)
EMPTY_PAGE = Page(())

# ---------------------------------------------------------------- commands and scripts


@dataclass(frozen=True, slots=True)
class Skip:
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class Halt:
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class Seq:
    first: Any
    second: Any
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class SetGlobal:
    ref: str
    expr: Any
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class SetSession:
    ref: str
    expr: Any
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class If:
    cond: Any
    then: Any
    orelse: Any
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class Login:
    user: Any
    password: Any
    sid: Any
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class Start:
    expr: Any
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class Auth:
    args: tuple
    label: Label
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class TokenCheck:
    left: Any
    right: Any
    body: Any
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class OriginCheck:
    origins: tuple  # tuple of Atom
    body: Any
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class Reply:
    page: Any
    script: Any
    cookies: tuple  # ((ref, z), ...)
    binders: tuple  # ((var, expr), ...)
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class Redirect:
    url: URL
    params: tuple
    cookies: tuple
    binders: tuple
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class Assign:
    ref: str
    expr: Any
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class Include:
    url: URL
    args: tuple
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True, slots=True)
class SetDom:
    tag: Any
    url: URL
    args: tuple
    pos: int = field(default=-1, compare=False)


# ---------------------------------------------------------------- servers, actions, world


@dataclass(frozen=True)
class Endpoint:
    url: URL
    cookies: tuple[str, ...]
    params: tuple[str, ...]
    body: Any
    pos: int = field(default=-1, compare=False)
    span: tuple[int, int] = field(default=(-1, -1), compare=False)


@dataclass(frozen=True)
class Server:
    name: str
    endpoints: tuple[Endpoint, ...]


@dataclass(frozen=True, slots=True)
class HaltAction:
    pass


@dataclass(frozen=True, slots=True)
class Load:
    tab: int
    url: URL
    inputs: tuple = ()  # ((position, value), ...)


@dataclass(frozen=True, slots=True)
class Submit:
    tab: int
    url: URL
    tag: Any
    inputs: tuple = ()


UserAction = Union[HaltAction, Load, Submit]

USER = "usr"


@dataclass
class World:
    universe: Any
    urls: dict  # name -> URL
    servers: tuple
    actions: tuple
    attacker: Any  # AttackerSpec
    passwords: dict  # (identity, URL) -> Name
    cookies: dict  # ref -> CookieSpec
    env: Any  # TypingEnv
    labels: dict = field(default_factory=dict)  # alias -> Label
    user: str = USER
    source: str = ""
    path: str | None = None

    @property
    def endpoints(self) -> list[Endpoint]:
        return [e for s in self.servers for e in s.endpoints]

    def endpoint_at(self, url: URL) -> Endpoint | None:
        for e in self.endpoints:
            if e.url == url:
                return e
        return None

    def url_name(self, url: URL) -> str:
        for k, v in self.urls.items():
            if v == url:
                return k
        return str(url)

    def identities(self) -> tuple[str, ...]:
        return (self.user,) + tuple(self.attacker.identities)

    def auth_labels(self) -> list[Label]:
        out = []
        for e in self.endpoints:
            for node in walk(e.body):
                if isinstance(node, Auth) and node.label not in out:
                    out.append(node.label)
        return out


# ---------------------------------------------------------------- generic traversal


_FIELDS: dict[type, tuple[str, ...]] = {}


def _traversed(cls) -> tuple[str, ...]:
    names = _FIELDS.get(cls)
    if names is None:
        names = _FIELDS[cls] = tuple(f.name for f in fields(cls) if f.name not in ("pos", "ann", "span"))
    return names


def children(node):
    if isinstance(node, tuple):
        return node
    if is_dataclass(node) and not isinstance(node, type):
        return tuple(getattr(node, f) for f in _traversed(type(node)))
    return ()


def walk(node):
    """Pre-order traversal over nested dataclasses and tuples."""
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(children(n)))


def commands_in(c) -> set[type]:
    return {type(n) for n in walk(c)}


def free_names(term) -> set[Name]:
    return {n for n in walk(term) if isinstance(n, Name)}


def vars_of(term) -> set[str]:
    return {n.name for n in walk(term) if isinstance(n, Var)}


def substitute(target, sigma: dict):
    """Capture-free replacement of variables by values."""
    if not sigma:
        return target
    return _subst(target, sigma)


def _subst(t, sigma):
    match t:
        case Var(name):
            if name in sigma:
                return Val(sigma[name], t.pos)
            return t
        case Reply(page, script, cookies, binders, pos):
            new_binders = tuple((x, _subst(e, sigma)) for x, e in binders)
            inner = {k: v for k, v in sigma.items() if k not in {x for x, _ in binders}}
            return Reply(_subst(page, inner), _subst(script, inner),
                         tuple((r, _subst_z(z, inner)) for r, z in cookies), new_binders, pos)
        case Redirect(url, params, cookies, binders, pos):
            new_binders = tuple((x, _subst(e, sigma)) for x, e in binders)
            inner = {k: v for k, v in sigma.items() if k not in {x for x, _ in binders}}
            return Redirect(url, tuple(_subst_z(z, inner) for z in params),
                            tuple((r, _subst_z(z, inner)) for r, z in cookies), new_binders, pos)
        case Form(url, params):
            return Form(url, tuple(_subst_z(z, sigma) for z in params))
        case Page(forms):
            return Page(tuple((tag, _subst(f, sigma)) for tag, f in forms))
        case tuple():
            return tuple(_subst(x, sigma) for x in t)
    if is_value(t) or t is ERROR_PAGE or not is_dataclass(t):
        return t
    changes = {}
    for f in fields(t):
        if f.name in ("pos", "ann", "span"):
            continue
        old = getattr(t, f.name)
        new = _subst(old, sigma)
        if new is not old:
            changes[f.name] = new
    if not changes:
        return t
    kw = {f.name: changes.get(f.name, getattr(t, f.name)) for f in fields(t)}
    return type(t)(**kw)


def _subst_z(z, sigma):
    # page/cookie positions hold bare values or variables
    if isinstance(z, Var) and z.name in sigma:
        return sigma[z.name]
    return z


def navigation_flows(actions) -> list[list]:
    """Split actions into per-tab flows, each starting with a load."""
    flows = []
    for k, a in enumerate(actions):
        if not isinstance(a, Load):
            continue
        flow = [a]
        for b in actions[k + 1:]:
            if isinstance(b, Load) and b.tab == a.tab:
                break
            if isinstance(b, Submit) and b.tab == a.tab:
                flow.append(b)
        flows.append(flow)
    return flows


def seq(*cmds):
    """Right-nested sequence of commands, skipping nothing."""
    if not cmds:
        return Skip()
    out = cmds[-1]
    for c in reversed(cmds[:-1]):
        out = Seq(c, out)
    return out


def flatten_seq(c) -> list:
    if isinstance(c, Seq):
        return flatten_seq(c.first) + flatten_seq(c.second)
    return [c]
