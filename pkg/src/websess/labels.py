"""Simple labels, label pairs, security types and the lambda labelling.

Simple labels are free-lattice terms over the atoms ``http(d)`` and
``https(d)``.  The confidentiality preorder is the smallest preorder closed
under the lattice introduction/elimination rules, decided here by Whitman's
condition.  Integrity is ordered the other way round, so the integrity join
is the confidentiality meet and vice versa.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache, reduce
from typing import Iterable, Union


class LabelError(ValueError):
    """Configuration or validation error in the label model."""


# ---------------------------------------------------------------- terms


@dataclass(frozen=True, slots=True)
class Atom:
    scheme: str  # "http" | "https"
    domain: str

    def __str__(self):
        return f"{self.scheme.upper()}({self.domain})"


@dataclass(frozen=True, slots=True)
class Join:
    left: "SimpleLabel"
    right: "SimpleLabel"

    def __str__(self):
        return f"({self.left} \\/ {self.right})"


@dataclass(frozen=True, slots=True)
class Meet:
    left: "SimpleLabel"
    right: "SimpleLabel"

    def __str__(self):
        return f"({self.left} /\\ {self.right})"


SimpleLabel = Union[Atom, Join, Meet]

CONF = "conf"
INTEG = "integ"


def http(d: str) -> Atom:
    return Atom("http", d)


def https(d: str) -> Atom:
    return Atom("https", d)


def atoms(l: SimpleLabel) -> set[Atom]:
    match l:
        case Atom():
            return {l}
        case Join(a, b) | Meet(a, b):
            return atoms(a) | atoms(b)
    raise TypeError(l)


def size(l: SimpleLabel) -> int:
    match l:
        case Atom():
            return 1
        case Join(a, b) | Meet(a, b):
            return 1 + size(a) + size(b)
    raise TypeError(l)


@lru_cache(maxsize=1 << 18)
def leq_conf(s: SimpleLabel, t: SimpleLabel) -> bool:
    """Whitman's decision procedure for the free lattice order."""
    if s == t:
        return True
    if isinstance(s, Join):
        return leq_conf(s.left, t) and leq_conf(s.right, t)
    if isinstance(t, Meet):
        return leq_conf(s, t.left) and leq_conf(s, t.right)
    # s is an atom or a meet, t is an atom or a join
    if isinstance(s, Atom):
        if isinstance(t, Atom):
            return False
        return leq_conf(s, t.left) or leq_conf(s, t.right)
    if isinstance(t, Atom):
        return leq_conf(s.left, t) or leq_conf(s.right, t)
    return (leq_conf(s.left, t) or leq_conf(s.right, t)
            or leq_conf(s, t.left) or leq_conf(s, t.right))


def leq(l: SimpleLabel, l2: SimpleLabel, kind: str = CONF, universe: "Universe | None" = None) -> bool:
    if universe is not None:
        universe.validate(l)
        universe.validate(l2)
    if kind == CONF:
        return leq_conf(l, l2)
    if kind == INTEG:
        return leq_conf(l2, l)
    raise ValueError(f"unknown order {kind!r}")


def equiv(a: SimpleLabel, b: SimpleLabel) -> bool:
    return leq_conf(a, b) and leq_conf(b, a)


def distributive_leq(s: SimpleLabel, t: SimpleLabel) -> bool:
    """Order of the free distributive lattice (used only as a diagnostic).

    s <= t iff every valuation making s true makes t true, reading atoms as
    propositional variables, join as or and meet as and.
    """
    names = sorted(atoms(s) | atoms(t), key=str)

    def ev(l, env):
        match l:
            case Atom():
                return env[l]
            case Join(a, b):
                return ev(a, env) or ev(b, env)
            case Meet(a, b):
                return ev(a, env) and ev(b, env)

    for bits in range(1 << len(names)):
        env = {a: bool(bits >> i & 1) for i, a in enumerate(names)}
        if ev(s, env) and not ev(t, env):
            return False
    return True


def join_c(a: SimpleLabel, b: SimpleLabel) -> SimpleLabel:
    if leq_conf(a, b):
        return b
    if leq_conf(b, a):
        return a
    return Join(a, b)


def meet_c(a: SimpleLabel, b: SimpleLabel) -> SimpleLabel:
    if leq_conf(a, b):
        return a
    if leq_conf(b, a):
        return b
    return Meet(a, b)


def join_i(a: SimpleLabel, b: SimpleLabel) -> SimpleLabel:
    return meet_c(a, b)


def meet_i(a: SimpleLabel, b: SimpleLabel) -> SimpleLabel:
    return join_c(a, b)


def fold(op, terms: Iterable[SimpleLabel]) -> SimpleLabel:
    terms = list(terms)
    if not terms:
        raise LabelError("empty fold")
    return reduce(op, terms)


def fold_raw(ctor, terms: Iterable[SimpleLabel]) -> SimpleLabel:
    """Left fold with the syntactic constructor, no absorption."""
    terms = list(terms)
    if not terms:
        raise LabelError("empty fold")
    return reduce(ctor, terms)


# ---------------------------------------------------------------- pairs and types


@dataclass(frozen=True, slots=True)
class Label:
    conf: SimpleLabel
    integ: SimpleLabel

    def __str__(self):
        return f"({self.conf} ; {self.integ})"


def C(x) -> SimpleLabel:
    return label_of(x).conf


def I(x) -> SimpleLabel:
    return label_of(x).integ


def label_leq(a: Label, b: Label) -> bool:
    return leq_conf(a.conf, b.conf) and leq_conf(b.integ, a.integ)


def label_equiv(a: Label, b: Label) -> bool:
    return equiv(a.conf, b.conf) and equiv(a.integ, b.integ)


def label_join(a: Label, b: Label) -> Label:
    return Label(join_c(a.conf, b.conf), join_i(a.integ, b.integ))


@dataclass(frozen=True, slots=True)
class Plain:
    label: Label

    def __str__(self):
        return str(self.label)


@dataclass(frozen=True, slots=True)
class Cred:
    label: Label

    def __str__(self):
        return f"cred{self.label}"


SecType = Union[Plain, Cred]


@dataclass(frozen=True, slots=True)
class Ref:
    """Reference type, the shape stored in the global and session maps."""
    content: SecType


def label_of(x) -> Label:
    if isinstance(x, Label):
        return x
    if isinstance(x, (Plain, Cred)):
        return x.label
    raise TypeError(f"no label for {x!r}")


def is_cred(t: SecType) -> bool:
    return isinstance(t, Cred)


def same_kind(t: SecType, label: Label) -> SecType:
    return Cred(label) if isinstance(t, Cred) else Plain(label)


def type_equiv(a: SecType, b: SecType) -> bool:
    return type(a) is type(b) and label_equiv(a.label, b.label)


# ---------------------------------------------------------------- universe


@dataclass(frozen=True)
class Universe:
    """Finite domain universe plus related-domain partition, HSTS set and
    the subdomain preorder."""

    domains: tuple[str, ...]
    groups: tuple[frozenset, ...] = ()
    hsts: frozenset = frozenset()
    subdomain_pairs: frozenset = frozenset()  # (sub, parent)

    def __post_init__(self):
        seen: set[str] = set()
        for g in self.groups:
            for d in g:
                if d not in self.domains:
                    raise LabelError(f"unknown domain {d!r} in related group")
                if d in seen:
                    raise LabelError(f"domain {d!r} in two related groups")
                seen.add(d)
        for d in self.hsts:
            if d not in self.domains:
                raise LabelError(f"unknown domain {d!r} in hsts set")
        for a, b in self.subdomain_pairs:
            if a not in self.domains or b not in self.domains:
                raise LabelError(f"unknown domain in subdomain {a} < {b}")

    def require_nonempty(self):
        if not self.domains:
            raise LabelError("empty domain universe")

    def has(self, d: str) -> bool:
        return d in self.domains

    def validate(self, l: SimpleLabel):
        for a in atoms(l):
            if a.domain not in self.domains:
                raise LabelError(f"unknown domain {a.domain!r} in label")
            if a.scheme not in ("http", "https"):
                raise LabelError(f"unknown scheme {a.scheme!r}")

    def related(self, d: str) -> tuple[str, ...]:
        for g in self.groups:
            if d in g:
                return tuple(x for x in self.domains if x in g)
        return (d,)

    def subdomains(self, d: str) -> tuple[str, ...]:
        return tuple(x for x in self.domains
                     if x == d or (x, d) in self.subdomain_pairs)

    # bounds -----------------------------------------------------------
    def bottom_c(self) -> SimpleLabel:
        self.require_nonempty()
        return fold_raw(Meet, [Meet(http(d), https(d)) for d in self.domains])

    def top_c(self) -> SimpleLabel:
        self.require_nonempty()
        return fold_raw(Join, [Join(http(d), https(d)) for d in self.domains])

    def bottom_i(self) -> SimpleLabel:
        return self.top_c()

    def top_i(self) -> SimpleLabel:
        return self.bottom_c()

    def bottom(self) -> Label:
        return Label(self.bottom_c(), self.bottom_i())

    def top(self) -> Label:
        return Label(self.top_c(), self.top_i())

    def low(self) -> Label:
        """(bottom_c, top_i): public and attacker-controlled."""
        return Label(self.bottom_c(), self.top_i())


def lattice(universe: Universe, op: str, *args):
    table = {
        "join_c": join_c, "meet_c": meet_c, "join_i": join_i, "meet_i": meet_i,
    }
    if op in table:
        return table[op](*args)
    return getattr(universe, op)()


# ---------------------------------------------------------------- lambda


@dataclass(frozen=True)
class URL:
    scheme: str
    domain: str
    path: str = "/"

    def __str__(self):
        return f"{self.scheme}://{self.domain}{self.path}"

    @property
    def origin(self) -> Atom:
        return Atom(self.scheme, self.domain)


NO_PREFIX, SECURE_PREFIX, HOST_PREFIX = "none", "secure-prefix", "host-prefix"


@dataclass(frozen=True)
class CookieSpec:
    domain: str
    secure: bool = False
    domain_attribute: str | None = None
    prefix: str = NO_PREFIX

    def __post_init__(self):
        if self.prefix not in (NO_PREFIX, SECURE_PREFIX, HOST_PREFIX):
            raise LabelError(f"unknown cookie prefix {self.prefix!r}")
        if self.prefix == HOST_PREFIX and self.domain_attribute is not None:
            raise LabelError("__Host- cookies cannot carry a Domain attribute")
        if self.prefix != NO_PREFIX and not self.secure:
            # both prefixes force the Secure attribute
            object.__setattr__(self, "secure", True)


def url_label(url: URL) -> Label:
    o = url.origin
    return Label(o, o)


def cookie_label(spec: CookieSpec, universe: Universe, hsts: Iterable[str] | None = None) -> Label:
    hsts = universe.hsts if hsts is None else frozenset(hsts)
    d = spec.domain
    if not universe.has(d):
        raise LabelError(f"unknown domain {d!r}")
    related = universe.related(d)
    if spec.prefix == HOST_PREFIX:
        return Label(https(d), https(d))
    readers = universe.subdomains(spec.domain_attribute) if spec.domain_attribute else (d,)
    if spec.secure:
        conf = fold_raw(Meet, [https(x) for x in readers])
    else:
        conf = fold_raw(Meet, [Meet(http(x), https(x)) for x in readers])
    if spec.prefix == SECURE_PREFIX:
        integ = fold_raw(Meet, [https(x) for x in related])
    else:
        plain_writers = [x for x in related if x not in hsts]
        if plain_writers and len(plain_writers) == len(related):
            integ = fold_raw(Meet, [Meet(http(x), https(x)) for x in related])
        else:
            parts = [http(x) for x in plain_writers] + [https(x) for x in related]
            integ = fold_raw(Meet, parts)
    return Label(conf, integ)


def lambda_of(subject, universe: Universe, hsts: Iterable[str] | None = None) -> Label:
    """Label of a URL, cookie spec or user action (the action's URL)."""
    if isinstance(subject, URL):
        return url_label(subject)
    if isinstance(subject, CookieSpec):
        return cookie_label(subject, universe, hsts)
    url = getattr(subject, "url", None)
    if isinstance(url, URL):
        return url_label(url)
    raise TypeError(f"cannot label {subject!r}")


# ---------------------------------------------------------------- attackers


@dataclass(frozen=True)
class AttackerSpec:
    kind: str  # "web" | "network" | "related" | "custom"
    domain: str | None = None
    label: Label | None = None
    knowledge: frozenset = field(default_factory=frozenset)
    identities: tuple[str, ...] = ()

    def describe(self) -> str:
        match self.kind:
            case "web" | "related":
                return f"{self.kind}:{self.domain}"
            case "custom":
                return f"custom:{self.label}"
        return self.kind


def attacker_label(spec: AttackerSpec, universe: Universe) -> Label:
    match spec.kind:
        case "web":
            if not universe.has(spec.domain):
                raise LabelError(f"unknown domain {spec.domain!r}")
            l = Join(http(spec.domain), https(spec.domain))
            return Label(l, l)
        case "network":
            universe.require_nonempty()
            l = fold_raw(Join, [http(d) for d in universe.domains])
            return Label(l, l)
        case "related":
            if not universe.has(spec.domain):
                raise LabelError(f"unknown domain {spec.domain!r}")
            others = [d for d in universe.related(spec.domain) if d != spec.domain]
            if not others:
                raise LabelError(f"domain {spec.domain!r} has no related domains")
            l = fold_raw(Join, [Join(http(d), https(d)) for d in others])
            return Label(l, l)
        case "custom":
            if spec.label is None:
                raise LabelError("custom attacker needs a label")
            return spec.label
    raise LabelError(f"unknown attacker kind {spec.kind!r}")


# ---------------------------------------------------------------- classification


def isclow(l: SimpleLabel, attacker: Label) -> bool:
    return leq_conf(l, attacker.conf)


def isilow(l: SimpleLabel, attacker: Label) -> bool:
    # the attacker can write at l: I(la) below l in the integrity order
    return leq_conf(l, attacker.integ)


def classify(l: SimpleLabel, attacker: Label, kind: str) -> str:
    low = isclow(l, attacker) if kind == CONF else isilow(l, attacker)
    return "low" if low else "high"


def is_low_type(t: SecType, attacker: Label) -> bool:
    return isclow(C(t), attacker) and isilow(I(t), attacker)


def _up(t: SecType, attacker: Label) -> bool:
    if isinstance(t, Cred):
        return is_low_type(t, attacker)
    return isclow(C(t), attacker)


def _down(t: SecType, attacker: Label) -> bool:
    if isinstance(t, Cred):
        return is_low_type(t, attacker)
    return isilow(I(t), attacker)


def subtype(t: SecType, t2: SecType, attacker: Label) -> bool:
    """Reflexive-transitive closure of the two subtyping rules.

    Plain types follow the label order; every type whose labels are low in
    both components is collapsed into a single class.  Chaining the two
    rules yields: t can reach the collapsed class when it is a low credential
    or a plain type of low confidentiality, and t2 is reachable from it when
    it is a low credential or a plain type of low integrity.
    """
    if type_equiv(t, t2):
        return True
    if isinstance(t, Plain) and isinstance(t2, Plain) and label_leq(t.label, t2.label):
        return True
    return _up(t, attacker) and _down(t2, attacker)


def cap_session(t: SecType, session: Label) -> SecType:
    """Meet of a session reference type with the session label, taken
    component-wise in both lattices; credential-ness is preserved."""
    return same_kind(t, Label(meet_c(C(t), session.conf), meet_i(I(t), session.integ)))
