"""Approximate minimum degree ordering for symmetric sparsity patterns.

Quotient-graph formulation with supervariable coalescing and natural element
absorption; external degrees use the classic upper-bound approximation
|A_i \\ Lp| + |Lp \\ {i}| + sum_e |Le \\ Lp| instead of exact set unions.
Aggressive (non-adjacent) element absorption and dense-row postponement are
deliberately left out so the ordering is simple and platform-deterministic.
"""

from __future__ import annotations

import numpy as np

from .matrix import SparseMat

__all__ = ["amd_order"]


def _full_adjacency(pattern: SparseMat):
    """Symmetrized adjacency lists (no diagonal) from an upper or full pattern."""
    n = pattern.n_cols
    cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(pattern.indptr))
    rows = pattern.indices
    off = rows != cols
    r, c = rows[off], cols[off]
    heads = np.concatenate([r, c])
    tails = np.concatenate([c, r])
    order = np.lexsort((tails, heads))
    heads, tails = heads[order], tails[order]
    if heads.size:
        keep = np.empty(heads.size, dtype=bool)
        keep[0] = True
        keep[1:] = (heads[1:] != heads[:-1]) | (tails[1:] != tails[:-1])
        heads, tails = heads[keep], tails[keep]
    counts = np.bincount(heads, minlength=n)
    ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    return [tails[ptr[i]: ptr[i + 1]].copy() for i in range(n)]


class _DegreeBuckets:
    """Doubly linked degree lists with a rising minimum-degree scan pointer."""

    def __init__(self, n: int, degrees: np.ndarray):
        self.head = np.full(n + 1, -1, dtype=np.int64)
        self.nxt = np.full(n, -1, dtype=np.int64)
        self.prv = np.full(n, -1, dtype=np.int64)
        self.deg = degrees.copy()
        self.mindeg = 0
        for v in range(n - 1, -1, -1):
            self.insert(v, int(degrees[v]))

    def insert(self, v: int, d: int) -> None:
        self.deg[v] = d
        h = self.head[d]
        self.nxt[v] = h
        self.prv[v] = -1
        if h >= 0:
            self.prv[h] = v
        self.head[d] = v
        if d < self.mindeg:
            self.mindeg = d

    def remove(self, v: int) -> None:
        p, nx = self.prv[v], self.nxt[v]
        if p >= 0:
            self.nxt[p] = nx
        else:
            self.head[self.deg[v]] = nx
        if nx >= 0:
            self.prv[nx] = p

    def update(self, v: int, d: int) -> None:
        self.remove(v)
        self.insert(v, d)

    def pop_min(self) -> int:
        while self.head[self.mindeg] < 0:
            self.mindeg += 1
        v = int(self.head[self.mindeg])
        self.remove(v)
        return v


def amd_order(pattern: SparseMat) -> np.ndarray:
    """Fill-reducing permutation of a square symmetric pattern.

    Returns ``perm`` such that position k of the elimination order holds the
    original index ``perm[k]``.
    """
    if pattern.n_rows != pattern.n_cols:
        raise ValueError("amd_order needs a square pattern")
    n = pattern.n_cols
    if n == 0:
        return np.zeros(0, dtype=np.int64)

    adj = _full_adjacency(pattern)
    elem_of = [[] for _ in range(n)]        # element ids adjacent to each variable
    elem_vars: list[np.ndarray | None] = [None] * n  # element id == its pivot variable
    elem_alive = np.zeros(n, dtype=bool)
    esize = np.zeros(n, dtype=np.int64)     # cached |Le| in supervariable units
    nv = np.ones(n, dtype=np.int64)         # supervariable multiplicity, 0 = merged away
    var_alive = np.ones(n, dtype=bool)      # False once eliminated
    members = [[v] for v in range(n)]

    w = np.zeros(n, dtype=np.int64)         # |Le \ Lp| scratch (w-trick)
    wstamp = np.zeros(n, dtype=np.int64)
    in_lp = np.zeros(n, dtype=bool)
    stamp = 0

    deg0 = np.array([a.size for a in adj], dtype=np.int64)
    buckets = _DegreeBuckets(n, deg0)
    n_alive = n
    order: list[int] = []

    def live_elems(v: int) -> list[int]:
        es = [e for e in elem_of[v] if elem_alive[e]]
        elem_of[v] = es
        return es

    def clean_element(e: int) -> np.ndarray:
        ev = elem_vars[e]
        ev = ev[var_alive[ev] & (nv[ev] > 0)]
        elem_vars[e] = ev
        esize[e] = int(nv[ev].sum())
        return ev

    while len(order) < n:
        p = buckets.pop_min()
        if not var_alive[p] or nv[p] == 0:
            continue

        # pivot neighborhood Lp: direct variables plus variables of adjacent elements
        pieces = [adj[p]]
        for e in live_elems(p):
            pieces.append(clean_element(e))
            elem_alive[e] = False           # absorbed into the new element
        cand = np.unique(np.concatenate(pieces)) if pieces else np.zeros(0, np.int64)
        cand = cand[var_alive[cand] & (nv[cand] > 0)]
        lp = cand[cand != p]

        order.extend(members[p])
        var_alive[p] = False
        n_alive -= int(nv[p])
        nv[p] = 0
        adj[p] = np.zeros(0, np.int64)
        elem_of[p] = []

        if lp.size == 0:
            continue

        elem_vars[p] = lp.copy()
        elem_alive[p] = True
        size_lp = int(nv[lp].sum())
        esize[p] = size_lp

        # pass 1: w[e] = |Le \ Lp| for every element touching Lp
        stamp += 1
        in_lp[lp] = True
        for i in lp:
            for e in live_elems(int(i)):
                if wstamp[e] != stamp:
                    clean_element(e)
                    w[e] = esize[e]
                    wstamp[e] = stamp
                w[e] -= nv[i]

        # pass 2: prune adjacency, attach the new element, approximate degrees
        for i_ in lp:
            i = int(i_)
            av = adj[i]
            av = av[var_alive[av] & (nv[av] > 0)]
            av = av[~in_lp[av]]
            adj[i] = av
            es = [e for e in elem_of[i] if elem_alive[e]]
            elem_of[i] = es + [p]
            d = int(nv[av].sum()) + (size_lp - int(nv[i]))
            for e in es:
                d += int(w[e])
            d = min(d, n_alive - int(nv[i]))
            buckets.update(i, d)

        # supervariable detection: merge indistinguishable members of Lp
        if lp.size > 1:
            sig: dict[int, list[int]] = {}
            for i_ in lp:
                i = int(i_)
                key = hash((len(elem_of[i]), int(adj[i].sum()) + sum(elem_of[i])))
                sig.setdefault(key, []).append(i)
            for group in sig.values():
                if len(group) < 2:
                    continue
                group.sort()
                for a_pos in range(len(group)):
                    i = group[a_pos]
                    if nv[i] == 0:
                        continue
                    for b_pos in range(a_pos + 1, len(group)):
                        j = group[b_pos]
                        if nv[j] == 0:
                            continue
                        if elem_of[i] == elem_of[j] and np.array_equal(
                            adj[i][adj[i] != j], adj[j][adj[j] != i]
                        ):
                            absorbed = int(nv[j])
                            nv[i] += nv[j]
                            nv[j] = 0
                            members[i].extend(members[j])
                            members[j] = []
                            buckets.remove(j)
                            adj[j] = np.zeros(0, np.int64)
                            elem_of[j] = []
                            # j moves from external to internal for i
                            buckets.update(i, max(0, int(buckets.deg[i]) - absorbed))
        in_lp[lp] = False

    return np.array(order, dtype=np.int64)
