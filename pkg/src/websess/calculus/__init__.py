"""Web calculus: abstract syntax, the ``.ws`` parser and its printer."""

from .parser import LoadError, ParseError, load_world, parse_world
from .pretty import pretty_cmd, pretty_expr, pretty_world
from .syntax import *  # noqa: F401,F403
from .syntax import free_names, navigation_flows, substitute

__all__ = [
    "LoadError", "ParseError", "load_world", "parse_world",
    "pretty_world", "pretty_cmd", "pretty_expr",
    "free_names", "navigation_flows", "substitute",
]
