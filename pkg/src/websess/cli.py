"""Command-line front end: ``websess check|simulate|attack|explain|lattice-oracle``.

Exit codes: 0 secure or fine, 1 insecure (rejection or violation), 2 malformed
input or unmet precondition, 3 bound exhausted without a verdict.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from . import __version__
from .calculus import ParseError, load_world
from .calculus.parser import parse_url_literal
from .calculus.pretty import Printer
from .envcfg import check_user_actions, check_wellformed_env
from .labels import AttackerSpec, LabelError, Plain, attacker_label, subtype

EXIT_OK, EXIT_INSECURE, EXIT_MALFORMED, EXIT_EXHAUSTED = 0, 1, 2, 3

MODES = ("check", "simulate", "attack", "explain", "lattice-oracle")


class UsageError(Exception):
    """Bad input that should exit with status 2."""


@dataclass
class RunConfig:
    mode: str
    world: str | None = None
    attacker: str | None = None
    json: bool = False
    depth: int = 60
    budget: int | None = None
    max_msg: int = 2
    max_requests: int = 1
    pool: str | None = None
    endpoint: str | None = None
    monitor: bool = True
    size: int = 5
    domains: str = "d1,d2"

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"unknown mode {self.mode!r}")


# ---------------------------------------------------------------- corpus


def corpus_dir():
    return resources.files("websess") / "corpus"


def corpus_names() -> list[str]:
    return sorted(p.name[:-3] for p in corpus_dir().iterdir() if p.name.endswith(".ws"))


def corpus_manifest() -> dict:
    return json.loads((corpus_dir() / "manifest.json").read_text(encoding="utf-8"))


def resolve_world_path(arg: str) -> Path:
    """A path on disk, or the bare name of a bundled corpus world."""
    p = Path(arg)
    if p.exists():
        return p
    name = p.name[:-3] if p.name.endswith(".ws") else p.name
    if p.parent in (Path("."), Path("corpus")) and name in corpus_names():
        return Path(str(corpus_dir() / f"{name}.ws"))
    raise UsageError(f"no such world file: {arg}")


def parse_attacker(text: str) -> tuple[str, str | None]:
    kind, _, dom = text.partition(":")
    if kind == "network" and not dom:
        return kind, None
    if kind in ("web", "related") and dom:
        return kind, dom
    raise UsageError(f"bad attacker {text!r}; expected web:<domain>, network or related:<domain>")


def with_attacker(world, text: str | None):
    """``world`` with its attacker kind replaced; identities and knowledge are kept."""
    if text is None:
        return world
    kind, dom = parse_attacker(text)
    old = world.attacker
    spec = AttackerSpec(kind, dom, None, old.knowledge, old.identities)
    try:
        la = attacker_label(spec, world.universe)
    except LabelError as e:
        raise UsageError(str(e)) from None
    for n in sorted(spec.knowledge, key=lambda n: n.id):
        if not subtype(n.ann, Plain(la), la):
            raise UsageError(f"attacker knowledge {n} is not at the level of {spec.describe()}")
    return replace(world, attacker=spec)


def load(config: RunConfig):
    path = resolve_world_path(config.world)
    world = load_world(path)
    return with_attacker(world, config.attacker)


def _attacker_or_none(world):
    return attacker_label(world.attacker, world.universe) if world.universe.domains else None


# ---------------------------------------------------------------- check


def rejection_dict(r) -> dict:
    return {"endpoint": r.endpoint, "branch": r.branch or None, "rule": r.rule,
            "position": {"offset": r.pos, "line": r.line, "column": r.col},
            "message": r.message, "query": r.query}


def cmd_check(config: RunConfig) -> tuple[int, dict, str]:
    from .typechecker import type_cluster

    world = load(config)
    la = _attacker_or_none(world)
    wf = check_wellformed_env(world.env, world, la)
    acts = check_user_actions(world.actions, world.env, la, world.universe) if la is not None else None
    verdict = type_cluster(world, la)
    ok = wf.ok and (acts is None or acts.ok) and verdict.ok
    code = EXIT_OK if ok else EXIT_INSECURE
    report = {
        "command": "check",
        "world": str(world.path),
        "attacker": world.attacker.describe(),
        "status": "accepted" if ok else "rejected",
        "exit": code,
        "environment": [{"condition": v.condition, "subject": v.subject, "query": v.query}
                        for v in wf.violations],
        "actions": [{"condition": i.condition, "index": i.index, "message": i.message}
                    for i in (acts.issues if acts else [])],
        "endpoints": [{"endpoint": name, "status": tv.status,
                       "rejections": [rejection_dict(r) for r in tv.rejections]}
                      for name, tv in verdict.endpoints.items()],
    }
    lines = [f"world     {world.path}", f"attacker  {world.attacker.describe()}"]
    lines.append("env       " + ("well-formed" if wf.ok else f"{len(wf.violations)} violation(s)"))
    lines += [f"  {v}" for v in wf.violations]
    if acts is not None:
        lines.append("actions   " + ("ok" if acts.ok else f"{len(acts.issues)} issue(s)"))
        lines += [f"  {i}" for i in acts.issues]
    for name, tv in verdict.endpoints.items():
        lines.append(f"{name:10s}{tv.status}")
        lines += [f"  {r}" for r in tv.rejections]
    lines.append("verdict   " + report["status"])
    return code, report, "\n".join(lines)


# ---------------------------------------------------------------- simulate


def _step_dict(fmt, k, t) -> dict:
    return {"index": k, "rule": t.rule, "detail": t.detail, "events": [fmt.event(e) for e in t.events]}


def cmd_simulate(config: RunConfig) -> tuple[int, dict, str]:
    from .engine import AuthEvt, Engine, TraceFormatter, dump_trace

    world = load(config)
    engine = Engine(world, monitor=config.monitor)
    run = engine.run_honest(budget=config.budget or 10_000)
    fmt = TraceFormatter(world)
    if run.exhausted:
        status, code = "budget-exhausted", EXIT_EXHAUSTED
    elif run.nondeterminism:
        status, code = "nondeterministic", EXIT_INSECURE
    elif run.monitor or not run.terminated_regularly():
        status, code = "irregular", EXIT_INSECURE
    else:
        status, code = "terminated", EXIT_OK
    report = {
        "command": "simulate",
        "world": str(world.path),
        "status": status,
        "exit": code,
        "steps": [_step_dict(fmt, k, t) for k, t in enumerate(run.steps, 1)],
        "auth": [fmt.event(e) for e in run.events if isinstance(e, AuthEvt)],
        "errors": run.errors(),
        "monitor": list(run.monitor),
        "stuck": [str(s) for s in run.stuck],
        "nondeterminism": run.nondeterminism,
    }
    lines = [dump_trace(world, run.steps), ""]
    lines += [f"monitor: {m}" for m in run.monitor]
    lines += [f"stuck: {s}" for s in run.stuck]
    if run.nondeterminism:
        lines.append(f"nondeterminism: {run.nondeterminism}")
    lines.append(f"{status}: {len(run.steps)} steps, {run.errors()} error event(s), "
                 f"{len(report['auth'])} auth event(s)")
    return code, report, "\n".join(lines)


# ---------------------------------------------------------------- attack


def parse_pool(text: str) -> tuple:
    from .calculus.syntax import Identity, Prim

    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        if item in ("true", "false"):
            out.append(Prim(item == "true"))
        elif item.lstrip("-").isdigit():
            out.append(Prim(int(item)))
        elif item.startswith('"') and item.endswith('"') and len(item) >= 2:
            out.append(Prim(item[1:-1]))
        elif item.isidentifier():
            out.append(Identity(item))
        else:
            raise UsageError(f"bad pool value {item!r}")
    return tuple(out)


def cmd_attack(config: RunConfig) -> tuple[int, dict, str]:
    from .engine import TraceFormatter
    from .harness import EXHAUSTED, VIOLATION, ExplorationBounds, check_session_integrity

    world = load(config)
    la = _attacker_or_none(world)
    if la is not None:
        wf = check_wellformed_env(world.env, world, la)
        acts = check_user_actions(world.actions, world.env, la, world.universe)
        problems = [f"environment condition {v}" for v in wf.violations]
        problems += [f"user-action condition {i}" for i in acts.issues]
        if problems:
            raise UsageError("precondition failed:\n  " + "\n  ".join(problems))
    try:
        kw = {"depth": config.depth, "max_msg": config.max_msg, "max_requests": config.max_requests}
        if config.budget is not None:
            kw["max_states"] = config.budget
        if config.pool is not None:
            kw["pool"] = parse_pool(config.pool)
        bounds = ExplorationBounds(**kw)
    except ValueError as e:
        raise UsageError(str(e)) from None
    v = check_session_integrity(world, bounds)
    code = {VIOLATION: EXIT_INSECURE, EXHAUSTED: EXIT_EXHAUSTED}.get(v.status, EXIT_OK)
    fmt = TraceFormatter(world)
    p = Printer(world)
    report = {
        "command": "attack",
        "world": str(world.path),
        "attacker": world.attacker.describe(),
        "status": v.status,
        "exit": code,
        "bounds": {"depth": bounds.depth, "max_msg": bounds.max_msg,
                   "max_requests": bounds.max_requests, "max_states": bounds.max_states},
        "labels": [p.label(l) for l in v.labels],
        "states": v.states,
        "elapsed": round(v.elapsed, 3),
        "note": v.note,
    }
    lines = [f"world     {world.path}", f"attacker  {world.attacker.describe()}",
             f"labels    {', '.join(report['labels']) or '(none)'}"]
    if v.violation:
        report["label"] = p.label(v.label)
        report["honest_projection"] = [fmt.event(e) for e in v.honest_projection]
        report["attacked_projection"] = [fmt.event(e) for e in v.attacked_projection]
        report["diverging"] = fmt.event(v.diverging)
        report["witness"] = [_step_dict(fmt, k, s) for k, s in enumerate(v.witness, 1)]
        lines.append("witness:")
        lines += [fmt.step(k, s) for k, s in enumerate(v.witness, 1)]
        lines.append(f"honest    [{', '.join(report['honest_projection'])}]")
        lines.append(f"attacked  [{', '.join(report['attacked_projection'])}]")
        lines.append(f"diverging {report['diverging']}")
    if v.note:
        lines.append(f"note      {v.note}")
    lines.append(f"{v.status} ({v.states} states, {v.elapsed:.1f}s)")
    return code, report, "\n".join(lines)


# ---------------------------------------------------------------- explain


def find_endpoint(world, name: str):
    if name in world.urls:
        ep = world.endpoint_at(world.urls[name])
        if ep is not None:
            return ep
    try:
        ep = world.endpoint_at(parse_url_literal(name))
    except (ParseError, ValueError, LabelError):
        ep = None
    if ep is None:
        known = ", ".join(world.url_name(e.url) for e in world.endpoints) or "none"
        raise UsageError(f"unknown endpoint {name!r} (endpoints: {known})")
    return ep


def cmd_explain(config: RunConfig) -> tuple[int, dict, str]:
    from .typechecker import derivation_to_dict, render_derivation, type_endpoint

    world = load(config)
    if config.endpoint is None:
        raise UsageError("explain needs an endpoint")
    ep = find_endpoint(world, config.endpoint)
    tv = type_endpoint(world, ep, _attacker_or_none(world))
    code = EXIT_OK if tv.ok else EXIT_INSECURE
    printer = Printer(world)
    report = {
        "command": "explain",
        "world": str(world.path),
        "endpoint": tv.endpoint,
        "status": tv.status,
        "exit": code,
        "rejections": [rejection_dict(r) for r in tv.rejections],
        "derivation": derivation_to_dict(tv.derivation, printer),
    }
    text = render_derivation(tv.derivation, printer, world)
    text += "\n" + "\n".join([f"{tv.endpoint}: {tv.status}"] + [f"  {r}" for r in tv.rejections])
    return code, report, text


# ---------------------------------------------------------------- lattice oracle


def cmd_lattice_oracle(config: RunConfig) -> tuple[int, dict, str]:
    from .oracle import compare

    domains = tuple(d for d in config.domains.split(",") if d)
    if not domains or config.size < 1:
        raise UsageError("need at least one domain and a positive size")
    t0 = time.perf_counter()
    terms, bad = compare(domains, config.size)
    elapsed = time.perf_counter() - t0
    code = EXIT_OK if not bad else EXIT_INSECURE
    report = {
        "command": "lattice-oracle",
        "status": "agree" if not bad else "disagree",
        "exit": code,
        "domains": list(domains),
        "max_size": config.size,
        "terms": len(terms),
        "pairs": len(terms) ** 2,
        "disagreements": [{"left": str(s), "right": str(t), "closure": c} for s, t, c in bad[:50]],
        "elapsed": round(elapsed, 3),
    }
    lines = [f"{len(terms)} terms of size <= {config.size} over {', '.join(domains)}",
             f"{len(terms) ** 2} pairs compared in {elapsed:.1f}s, {len(bad)} disagreement(s)"]
    lines += [f"  {s} <= {t}: closure says {c}" for s, t, c in bad[:20]]
    return code, report, "\n".join(lines)


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "attack": cmd_attack,
    "explain": cmd_explain,
    "lattice-oracle": cmd_lattice_oracle,
}


# ---------------------------------------------------------------- argv


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="websess", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="mode", required=True, metavar="MODE")

    def common(p, world=True):
        if world:
            p.add_argument("world", help="a .ws file or the name of a bundled corpus world")
            p.add_argument("--attacker", metavar="SPEC", help="web:<domain>, network or related:<domain>")
        p.add_argument("--json", action="store_true", help="emit the structured report")

    common(sub.add_parser("check", help="well-formedness and type checking"))
    p = sub.add_parser("simulate", help="run the honest trace")
    common(p)
    p.add_argument("--budget", type=int, help="maximum number of steps (default 10000)")
    p.add_argument("--no-monitor", dest="monitor", action="store_false",
                   help="skip the cookie-jar annotation monitor")
    p = sub.add_parser("attack", help="bounded search for session-integrity violations")
    common(p)
    p.add_argument("--depth", type=int, default=60, help="transitions per trace (default 60)")
    p.add_argument("--budget", type=int, help="distinct states before giving up (default 200000)")
    p.add_argument("--max-msg", type=int, default=2, help="defined fields per attacker message")
    p.add_argument("--max-requests", type=int, default=1, help="attacker requests per trace")
    p.add_argument("--pool", help='comma-separated primitives, e.g. true,false,0,1,atk,"x"')
    p = sub.add_parser("explain", help="typing derivation of one endpoint")
    common(p)
    p.add_argument("endpoint", help="URL name or literal")
    p = sub.add_parser("lattice-oracle", help="compare the label order against rule closure")
    common(p, world=False)
    p.add_argument("--size", type=int, default=5, help="maximum term size (default 5)")
    p.add_argument("--domains", default="d1,d2", help="comma-separated domains (default d1,d2)")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    fields = {k: v for k, v in vars(ns).items() if k in RunConfig.__dataclass_fields__ and v is not None}
    return RunConfig(**fields)


def run(config: RunConfig) -> tuple[int, dict, str]:
    extra = {}
    try:
        return COMMANDS[config.mode](config)
    except ParseError as e:
        code, msg = EXIT_MALFORMED, f"{config.world}:{e}"
        kind = "parse-error"
        if e.pos >= 0:
            extra["position"] = {"offset": e.pos, "line": e.line, "column": e.col}
    except (UsageError, LabelError) as e:
        code, msg, kind = EXIT_MALFORMED, str(e), "usage-error"
    return code, {"command": config.mode, "world": config.world, "status": kind,
                  "exit": code, "message": msg, **extra}, f"error: {msg}"


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    code, report, text = run(config_from_args(ns))
    if ns.json:
        print(json.dumps(report, indent=2, ensure_ascii=False))
    else:
        print(text, file=sys.stderr if code == EXIT_MALFORMED else sys.stdout)
    return code


if __name__ == "__main__":
    sys.exit(main())
