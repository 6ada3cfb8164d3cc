"""Backtracking search for a size-n machine consistent with a prefix tree.

Prefix-tree nodes are assigned machine states.  The root sits in state 0;
a node's state follows from its parent's state once the transition for the
connecting label is decided, so the only choices are transition targets.
Each decision is propagated eagerly through the tree while per-(state,
label) reward ranges are tracked; a range wider than 2*eps is a conflict.
New states are numbered in creation order, which removes state-permutation
symmetry.

Two nodes are incompatible when some label continuation shared by both
reaches edges whose rewards are more than 2*eps apart; such nodes can never
share a state.  The pairwise relation is precomputed as bitsets.  A greedy
clique of mutually incompatible nodes containing the root gives a lower
bound on the size and is pinned to states 0..k-1 before the search starts.
"""
from __future__ import annotations

import math
import sys
import time

import numpy as np

# above this many prefix-tree nodes the quadratic table is skipped
MAX_TABLE_NODES = 40000


class SolverTimeout(Exception):
    def __init__(self, msg, nodes=0, seconds=0.0):
        super().__init__(msg)
        self.nodes = nodes
        self.seconds = seconds


class SearchResult:
    __slots__ = ("delta", "means", "used", "nodes", "seconds")

    def __init__(self, delta, means, used, nodes, seconds):
        self.delta = delta
        self.means = means
        self.used = used
        self.nodes = nodes
        self.seconds = seconds


def incompatibility(tree, lim: float):
    """Per-node bitsets (Python ints) of incompatible nodes, or None when
    the tree is too large for the quadratic table."""
    N = len(tree)
    if N > MAX_TABLE_NODES:
        return None
    cache = tree.__dict__.setdefault("_incompat", {})
    if lim in cache:
        return cache[lim]
    labels = sorted(tree.labels(), key=lambda l: (len(l), sorted(l)))
    child = {}
    lo = {}
    hi = {}
    for lab in labels:
        child[lab] = np.full(N, -1, dtype=np.intp)
        lo[lab] = np.full(N, np.inf)
        hi[lab] = np.full(N, -np.inf)
    for u, lab, c, rs in tree.edges():
        child[lab][u] = c
        lo[lab][u] = rs[0]
        hi[lab][u] = rs[-1]
    has = {lab: child[lab] >= 0 for lab in labels}
    safe = {lab: np.where(has[lab], child[lab], 0) for lab in labels}
    rows = {}
    bits = [0] * N
    # children have larger ids than their parent (breadth-first numbering)
    for u in range(N - 1, -1, -1):
        row = np.zeros(N, dtype=bool)
        for lab, c in tree.children[u].items():
            rs = tree.rewards[u][lab]
            span = np.maximum(hi[lab], rs[-1]) - np.minimum(lo[lab], rs[0])
            hit = span > lim
            crow = rows.pop(c)
            hit |= crow[safe[lab]]
            row |= hit & has[lab]
        rows[u] = row
        bits[u] = int.from_bytes(np.packbits(row, bitorder="little").tobytes(), "little")
    cache[lim] = bits
    return bits


def greedy_clique(bits) -> list:
    """Mutually incompatible nodes, starting from the root."""
    clique = [0]
    cand = bits[0]
    while cand:
        best, best_deg = -1, -1
        c = cand
        while c:
            low = c & -c
            v = low.bit_length() - 1
            c ^= low
            deg = (bits[v] & cand).bit_count()
            if deg > best_deg:
                best, best_deg = v, deg
        clique.append(best)
        cand &= bits[best]
    return clique


def search(problem, node_budget=None, time_budget=None):
    """Return a :class:`SearchResult` (``delta`` is None when unsatisfiable).

    Raises :class:`SolverTimeout` when either budget runs out.
    """
    t0 = time.monotonic()
    deadline = t0 + time_budget if time_budget else None
    tree = problem.tree
    n = problem.size
    alphabet = problem.alphabet
    E = len(alphabet)
    li_of = problem.label_index
    lim = 2 * problem.eps + problem.tol

    if problem.prefix_conflict():
        return SearchResult(None, None, 0, 0, time.monotonic() - t0)

    N = len(tree)
    bits = incompatibility(tree, lim)
    pinned = greedy_clique(bits) if bits is not None else [0]
    if bits is None:
        bits = [0] * N
    if len(pinned) > n:
        return SearchResult(None, None, 0, 0, time.monotonic() - t0)

    kids = []
    for u, ch in enumerate(tree.children):
        row = []
        for lab, c in ch.items():
            rs = tree.rewards[u][lab]
            row.append((li_of[lab], c, rs[0], rs[-1]))
        kids.append(row)

    node_state = [-1] * N
    members = [0] * n  # bitset of nodes placed in each state
    delta = [-1] * (n * E)
    lo = [math.inf] * (n * E)
    hi = [-math.inf] * (n * E)
    # nodes waiting on an undecided transition, with the union of their
    # incompatibility sets and the state they are already pinned to
    pending = [[] for _ in range(n * E)]
    pbits = [0] * (n * E)
    pforced = [-1] * (n * E)
    trail = []

    def assign(u, p):
        stack = [(u, p)]
        while stack:
            u, p = stack.pop()
            have = node_state[u]
            if have >= 0:
                # pinned node reached from its parent; subtree already placed
                if have != p:
                    return False
                continue
            m = members[p]
            if bits[u] & m:
                return False
            trail.append((4, p, m, 0))
            members[p] = m | (1 << u)
            node_state[u] = p
            trail.append((0, u, 0, 0))
            base = p * E
            for li, c, rmin, rmax in kids[u]:
                idx = base + li
                l = lo[idx]
                h = hi[idx]
                if rmin < l or rmax > h:
                    trail.append((2, idx, l, h))
                    if rmin < l:
                        l = lo[idx] = rmin
                    if rmax > h:
                        h = hi[idx] = rmax
                    if h - l > lim:
                        return False
                q = delta[idx]
                if q >= 0:
                    stack.append((c, q))
                else:
                    pending[idx].append(c)
                    trail.append((3, idx, pbits[idx], pforced[idx]))
                    pbits[idx] |= bits[c]
                    f = node_state[c]
                    if f >= 0:
                        if pforced[idx] >= 0 and pforced[idx] != f:
                            return False
                        pforced[idx] = f
        return True

    def undo(mark):
        while len(trail) > mark:
            op, a, b, c = trail.pop()
            if op == 0:
                node_state[a] = -1
            elif op == 1:
                delta[a] = -1
            elif op == 2:
                lo[a] = b
                hi[a] = c
            elif op == 3:
                pending[a].pop()
                pbits[a] = b
                pforced[a] = c
            else:
                members[a] = b

    def set_delta(idx, q):
        delta[idx] = q
        trail.append((1, idx, 0, 0))
        for c in list(pending[idx]):
            if not assign(c, q):
                return False
        return True

    used = len(pinned)
    nodes = 0

    def choose():
        """Open transition with the fewest feasible targets (forward
        checking); ``(None, None)`` when all are decided, ``(idx, [])`` on a
        dead end."""
        best, best_opts, best_key = None, None, None
        for idx in range(used * E):
            if delta[idx] >= 0 or not pending[idx]:
                continue
            pb = pbits[idx]
            f = pforced[idx]
            if f >= 0:
                opts = [] if members[f] & pb else [f]
            else:
                p = idx // E
                opts = [q for q in range(used) if not members[q] & pb]
                if p in opts:
                    opts.remove(p)
                    opts.insert(0, p)
                if used < n:
                    opts.append(used)
            if not opts:
                return idx, opts
            key = (len(opts), pending[idx][0])
            if best_key is None or key < best_key:
                best, best_opts, best_key = idx, opts, key
        return best, best_opts

    def dfs():
        nonlocal used, nodes
        idx, options = choose()
        if idx is None:
            return True
        for q in options:
            nodes += 1
            if node_budget is not None and nodes > node_budget:
                raise SolverTimeout("node budget exhausted", nodes, time.monotonic() - t0)
            if deadline is not None and nodes & 63 == 0 and time.monotonic() > deadline:
                raise SolverTimeout("time budget exhausted", nodes, time.monotonic() - t0)
            mark = len(trail)
            fresh = q == used
            if fresh:
                used += 1
            if set_delta(idx, q) and dfs():
                return True
            undo(mark)
            if fresh:
                used -= 1
        return False

    limit = sys.getrecursionlimit()
    need = n * E + 200
    if limit < need:
        sys.setrecursionlimit(need)
    try:
        ok = all(assign(u, i) for i, u in enumerate(pinned)) and dfs()
    finally:
        if limit < need:
            sys.setrecursionlimit(limit)
    seconds = time.monotonic() - t0
    if not ok:
        return SearchResult(None, None, 0, nodes, seconds)
    dmap, means = {}, {}
    for idx, q in enumerate(delta):
        if q >= 0:
            p, li = divmod(idx, E)
            dmap[(p, alphabet[li])] = q
            means[(p, alphabet[li])] = (lo[idx] + hi[idx]) / 2
    return SearchResult(dmap, means, used, nodes, seconds)
