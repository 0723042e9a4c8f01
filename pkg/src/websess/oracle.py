"""Brute-force rule closure for the confidentiality preorder.

Independent of the Whitman procedure in :mod:`websess.labels`: it enumerates
a subterm-closed population and saturates the inference rules

    l <= l                      (reflexivity)
    li <= l1 \\/ l2             l1 /\\ l2 <= li
    l1 <= l3, l2 <= l3  =>  l1 \\/ l2 <= l3
    l3 <= l1, l3 <= l2  =>  l3 <= l1 /\\ l2
    l1 <= l2, l2 <= l3  =>  l1 <= l3

as boolean matrices until a fixed point is reached.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from .labels import Atom, Join, Meet, SimpleLabel, http, https, leq_conf, size


def enumerate_terms(domains, max_size: int) -> list[SimpleLabel]:
    """All terms with at most ``max_size`` nodes, ordered by size."""
    by_size: dict[int, list[SimpleLabel]] = {1: [a for d in domains for a in (http(d), https(d))]}
    for n in range(2, max_size + 1):
        out = []
        for k in range(1, n - 1):
            left, right = by_size.get(k, []), by_size.get(n - 1 - k, [])
            for a, b in product(left, right):
                out.append(Join(a, b))
                out.append(Meet(a, b))
        by_size[n] = out
    return [t for n in sorted(by_size) for t in by_size[n]]


def closure(terms: list[SimpleLabel]) -> np.ndarray:
    """Least relation on ``terms`` closed under the rules above.

    ``terms`` must be closed under subterms.
    """
    index = {t: i for i, t in enumerate(terms)}
    n = len(terms)
    rel = np.eye(n, dtype=bool)
    joins, meets = [], []
    for t, i in index.items():
        if isinstance(t, Join):
            l, r = index[t.left], index[t.right]
            rel[l, i] = rel[r, i] = True
            joins.append((i, l, r))
        elif isinstance(t, Meet):
            l, r = index[t.left], index[t.right]
            rel[i, l] = rel[i, r] = True
            meets.append((i, l, r))
    while True:
        before = int(rel.sum())
        for i, l, r in joins:
            rel[i, :] |= rel[l, :] & rel[r, :]
        for i, l, r in meets:
            rel[:, i] |= rel[:, l] & rel[:, r]
        m = rel.astype(np.uint8)
        rel |= (m @ m) > 0
        if int(rel.sum()) == before:
            return rel


def compare(domains=("d1", "d2"), max_size: int = 5):
    """Return (terms, disagreements) between Whitman and the closure."""
    terms = enumerate_terms(domains, max_size)
    rel = closure(terms)
    bad = []
    for i, s in enumerate(terms):
        row = rel[i]
        for j, t in enumerate(terms):
            if leq_conf(s, t) != bool(row[j]):
                bad.append((s, t, bool(row[j])))
    return terms, bad


__all__ = ["enumerate_terms", "closure", "compare", "size", "Atom"]
