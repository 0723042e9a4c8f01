"""Typing environments and their static well-formedness checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .labels import (
    URL, CONF, Cred, Label, Plain, SecType, Universe, attacker_label, C, I,
    equiv, is_cred, isclow, isilow, label_equiv, lambda_of, leq_conf, subtype,
    type_equiv,
)


@dataclass(frozen=True)
class URLType:
    """Connection label, parameter types and expected reply integrity."""

    label: Label
    params: tuple
    reply: Any  # SimpleLabel

    def matches(self, other: "URLType") -> bool:
        return (label_equiv(self.label, other.label)
                and len(self.params) == len(other.params)
                and all(type_equiv(a, b) for a, b in zip(self.params, other.params))
                and equiv(self.reply, other.reply))

    def __str__(self):
        ps = ", ".join(map(str, self.params))
        return f"({self.label}, [{ps}], {self.reply})"


@dataclass
class TypingEnv:
    urls: dict = field(default_factory=dict)      # URL -> URLType
    vars: dict = field(default_factory=dict)      # var -> SecType
    globals: dict = field(default_factory=dict)   # global ref -> SecType
    sessions: dict = field(default_factory=dict)  # session ref -> SecType
    forms: dict = field(default_factory=dict)     # tag value -> URLType
    protected: frozenset = frozenset()

    def with_vars(self, vs: dict) -> "TypingEnv":
        return TypingEnv(self.urls, dict(vs), self.globals, self.sessions, self.forms, self.protected)


@dataclass(frozen=True)
class Violation:
    condition: str  # 1a, 1b-i, 1b-ii, 2a, 2b, 2c, 2d, missing
    subject: str
    query: str

    def __str__(self):
        return f"[{self.condition}] {self.subject}: {self.query}"


@dataclass
class WellFormednessReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def conditions(self) -> list[str]:
        return [v.condition for v in self.violations]


def _q(a, op, b) -> str:
    return f"{a} {op} {b}"


def check_wellformed_env(env: TypingEnv, world, attacker: Label | None = None) -> WellFormednessReport:
    universe: Universe = world.universe
    if not universe.domains:
        # nothing can be labelled, so nothing can be violated
        return WellFormednessReport([])
    if attacker is None:
        attacker = attacker_label(world.attacker, universe)
    out: list[Violation] = []

    for ep in world.endpoints:
        if ep.url not in env.urls:
            out.append(Violation("missing", world.url_name(ep.url), "no urltype entry for endpoint"))

    # condition 1: URLs
    for url, ut in env.urls.items():
        name = world.url_name(url)
        lam = lambda_of(url, universe)
        if not equiv(C(ut.label), C(lam)):
            out.append(Violation("1a", name, _q(C(ut.label), "=C", C(lam))))
        elif not leq_conf(I(ut.label), I(lam)):
            out.append(Violation("1a", name, _q(I(lam), "<=I", I(ut.label))))
        for k, t in enumerate(ut.params, 1):
            if not leq_conf(C(t), C(ut.label)) or not leq_conf(I(t), I(ut.label)):
                out.append(Violation("1b-i", f"{name} param {k}",
                                     f"{C(t)} <=C {C(ut.label)} and {I(ut.label)} <=I {I(t)}"))
            if is_cred(t) and isclow(C(t), attacker) and not isilow(I(t), attacker):
                out.append(Violation("1b-ii", f"{name} param {k}",
                                     f"low-confidentiality credential {t} must have low integrity"))

    # condition 2: references
    urls = _url_population(world, universe)
    for ref, t in env.globals.items():
        spec = world.cookies.get(ref)
        if spec is not None:
            lam = lambda_of(spec, universe)
            if not leq_conf(C(t), C(lam)) or not leq_conf(I(t), I(lam)):
                out.append(Violation("2a", ref, f"{C(t)} <=C {C(lam)} and {I(lam)} <=I {I(t)}"))
            for u in urls:
                lu = lambda_of(u, universe)
                if leq_conf(C(lam), C(lu)) and isilow(I(lu), attacker) and not isclow(C(t), attacker):
                    out.append(Violation("2b", ref, f"readable by low-integrity {u} but {C(t)} is high"))
                    break
            if isilow(I(lam), attacker) and is_cred(t) and not isclow(C(t), attacker):
                out.append(Violation("2c", ref, f"settable at {I(lam)} (low) but credential {t} has high confidentiality"))
        if is_cred(t) and isclow(C(t), attacker) and not isilow(I(t), attacker):
            out.append(Violation("2d", ref, f"low-confidentiality credential {t} must have low integrity"))
    return WellFormednessReport(out)


def _url_population(world, universe: Universe) -> list[URL]:
    seen, out = set(), []
    cands = [e.url for e in world.endpoints] + [URL(s, d, "/") for d in universe.domains for s in ("http", "https")]
    for u in cands:
        key = (u.scheme, u.domain)
        if key not in seen:
            seen.add(key)
            out.append(u)
    return out


# ---------------------------------------------------------------- user actions


@dataclass(frozen=True)
class ActionIssue:
    condition: str  # "1", "3", "tag"
    index: int
    message: str

    def __str__(self):
        return f"[cond {self.condition}] action {self.index}: {self.message}"


@dataclass
class ActionReport:
    issues: list = field(default_factory=list)
    condition2: str = "requires-simulation"

    @property
    def ok(self) -> bool:
        return not self.issues


def input_type(v, universe: Universe) -> SecType:
    ann = getattr(v, "ann", None)
    return ann if ann is not None else Plain(universe.bottom())


def check_user_actions(actions, env: TypingEnv, attacker: Label, universe: Universe) -> ActionReport:
    from .calculus.syntax import Load, Submit, navigation_flows

    issues = []
    index = {id(a): i for i, a in enumerate(actions)}
    for i, a in enumerate(actions):
        if isinstance(a, Load):
            ut = env.urls.get(a.url)
            if ut is None:
                continue
            issues += _check_inputs(i, a.inputs, ut, attacker, universe, a.url)
        elif isinstance(a, Submit):
            ut = env.forms.get(a.tag)
            if ut is None:
                issues.append(ActionIssue("tag", i, f"unknown form tag {a.tag}"))
                continue
            issues += _check_inputs(i, a.inputs, ut, attacker, universe, a.url)
    for flow in navigation_flows(list(actions)):
        low_seen = False
        for a in flow:
            low = isilow(I(lambda_of(a.url, universe)), attacker)
            if low_seen and not low:
                issues.append(ActionIssue("3", index[id(a)], f"high-integrity action after a low-integrity one in tab {a.tab}"))
            low_seen = low_seen or low
    return ActionReport(issues)


def _check_inputs(i, inputs, ut: URLType, attacker, universe, url) -> list:
    out = []
    low_page = isilow(I(lambda_of(url, universe)), attacker)
    for k, v in inputs:
        if not 1 <= k <= len(ut.params):
            out.append(ActionIssue("1", i, f"input position {k} out of range"))
            continue
        t = input_type(v, universe)
        if not subtype(t, ut.params[k - 1], attacker):
            out.append(ActionIssue("1", i, f"input {k} of type {t} is not a subtype of {ut.params[k - 1]}"))
        if low_page and not isclow(C(t), attacker):
            out.append(ActionIssue("1", i, f"input {k} is confidential but the page has low integrity"))
    return out


__all__ = [
    "URLType", "TypingEnv", "Violation", "WellFormednessReport", "check_wellformed_env",
    "ActionIssue", "ActionReport", "check_user_actions", "input_type", "CONF", "Cred",
]
