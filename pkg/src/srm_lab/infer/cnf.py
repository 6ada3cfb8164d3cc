"""Propositional encoding of the constraint problem for an in-process CDCL
solver.

The run and transition variables are kept as they are.  The real-valued
outputs are eliminated: a set of rewards fits in one interval of half-width
eps exactly when every pair of them is at most 2*eps apart, so the output
constraints become binary exclusions.  Edges sharing a reward range form a
class; an auxiliary variable z[v, l, k] marks that some class-k edge on label l runs
through state v, and incompatible classes exclude each other per state.
"""
from __future__ import annotations

import threading
import time

from .search import SolverTimeout, greedy_clique, incompatibility

SAT_SOLVER = "glucose4"


class CNF:
    def __init__(self, problem, pinned, bits=None, bfs=False):
        tree = problem.tree
        n = problem.size
        E = len(problem.alphabet)
        N = len(tree)
        li_of = problem.label_index
        lim = 2 * problem.eps + problem.tol
        self.n, self.E, self.N = n, E, N
        self.top = N * n + n * E * n
        clauses = []
        x, d = self.x, self.d

        for i, u in enumerate(pinned):
            clauses.append([x(u, i)])
        for u in range(N):
            clauses.append([x(u, v) for v in range(n)])
            for a in range(n):
                for b in range(a + 1, n):
                    clauses.append([-x(u, a), -x(u, b)])
        for p in range(n):
            for li in range(E):
                clauses.append([d(p, li, q) for q in range(n)])
                for a in range(n):
                    for b in range(a + 1, n):
                        clauses.append([-d(p, li, a), -d(p, li, b)])

        classes = {}  # li -> {(lo, hi): [edge parents]}
        for u, lab, c, rs in tree.edges():
            li = li_of[lab]
            for p in range(n):
                for q in range(n):
                    clauses.append([-x(u, p), -d(p, li, q), x(c, q)])
                    clauses.append([-x(u, p), -x(c, q), d(p, li, q)])
            classes.setdefault(li, {}).setdefault((rs[0], rs[-1]), []).append(u)

        for li, groups in classes.items():
            keys = sorted(groups)
            clash = [
                (a, b)
                for a in range(len(keys))
                for b in range(a + 1, len(keys))
                if max(keys[a][1], keys[b][1]) - min(keys[a][0], keys[b][0]) > lim
            ]
            if not clash:
                continue
            for v in range(n):
                z = []
                for k in keys:
                    self.top += 1
                    z.append(self.top)
                    for u in groups[k]:
                        clauses.append([-x(u, v), self.top])
                for a, b in clash:
                    clauses.append([-z[a], -z[b]])
        if bfs:
            self._bfs_order(clauses)
        # redundant: incompatible prefix-tree nodes never share a state
        if bits is not None:
            for u in range(N):
                b = bits[u] >> (u + 1)
                w = u + 1
                while b:
                    low = b & -b
                    w2 = w + low.bit_length() - 1
                    b >>= low.bit_length()
                    w = w2 + 1
                    for v in range(n):
                        clauses.append([-x(u, v), -x(w2, v)])
        self.clauses = clauses

    def _new(self):
        self.top += 1
        return self.top

    def _bfs_order(self, clauses):
        """States numbered in breadth-first order of the transition graph,
        siblings ordered by their smallest incoming label."""
        n, E, d = self.n, self.E, self.d
        t = {}
        for i in range(n):
            for j in range(i + 1, n):
                t[i, j] = v = self._new()
                clauses.append([-v] + [d(i, l, j) for l in range(E)])
                for l in range(E):
                    clauses.append([-d(i, l, j), v])
        par = {}
        for j in range(1, n):
            for i in range(j):
                par[j, i] = v = self._new()
                clauses.append([-v, t[i, j]])
                for k in range(i):
                    clauses.append([-v, -t[k, j]])
                clauses.append([v, -t[i, j]] + [t[k, j] for k in range(i)])
            clauses.append([par[j, i] for i in range(j)])
        for j in range(1, n - 1):
            for i in range(j):
                for k in range(i):
                    clauses.append([-par[j, i], -par[j + 1, k]])
        m = {}
        for i in range(n):
            for j in range(i + 1, n):
                for l in range(E):
                    m[i, l, j] = v = self._new()
                    clauses.append([-v, d(i, l, j)])
                    for k in range(l):
                        clauses.append([-v, -d(i, k, j)])
                    clauses.append([v, -d(i, l, j)] + [d(i, k, j) for k in range(l)])
        for j in range(1, n - 1):
            for i in range(j):
                for l in range(E):
                    for k in range(l):
                        clauses.append([-par[j, i], -par[j + 1, i], -m[i, l, j], -m[i, k, j + 1]])

    def x(self, u, v):
        return 1 + u * self.n + v

    def d(self, p, li, q):
        return 1 + self.N * self.n + (p * self.E + li) * self.n + q


def solve_cnf(problem, conflict_budget=None, time_budget=None, symmetry="bfs", hint=None):
    """``(delta, conflicts)``; delta is None when unsatisfiable.

    ``delta`` maps ``(state, label)`` to the successor for every transition
    the prefix tree exercises.  ``hint`` (same shape, e.g. the previous
    hypothesis in canonical numbering) only sets the solver's initial
    polarities.  Raises :class:`SolverTimeout` when a budget runs out.
    """
    from pysat.solvers import Solver

    t0 = time.monotonic()
    if problem.prefix_conflict():
        return None, 0
    bits = incompatibility(problem.tree, 2 * problem.eps + problem.tol)
    clique = greedy_clique(bits) if bits is not None else [0]
    if len(clique) > problem.size:
        return None, 0
    if symmetry == "bfs":
        cnf = CNF(problem, [0], bits, bfs=True)
    else:
        cnf = CNF(problem, clique, bits)
    with Solver(name=SAT_SOLVER, bootstrap_with=cnf.clauses) as s:
        if hint:
            phases = []
            for (p, lab), q in hint.items():
                li = problem.label_index.get(lab)
                if li is None or not (0 <= p < problem.size and 0 <= q < problem.size):
                    continue
                phases.extend(
                    cnf.d(p, li, r) if r == q else -cnf.d(p, li, r) for r in range(problem.size)
                )
            if phases:
                s.set_phases(phases)
        timer = None
        if conflict_budget is not None:
            s.conf_budget(int(conflict_budget))
        if time_budget:
            timer = threading.Timer(time_budget, s.interrupt)
            timer.start()
        try:
            if conflict_budget is None and not time_budget:
                res = s.solve()
            else:
                res = s.solve_limited(expect_interrupt=timer is not None)
        finally:
            if timer is not None:
                timer.cancel()
        conflicts = int(s.accum_stats().get("conflicts", 0))
        if res is None:
            raise SolverTimeout("conflict or time budget exhausted", conflicts, time.monotonic() - t0)
        if not res:
            return None, conflicts
        model = set(v for v in s.get_model() if v > 0)
    delta = {}
    tree = problem.tree
    state = [0] * len(tree)
    for u, lab, c, _ in tree.edges():
        li = problem.label_index[lab]
        p = state[u]
        key = (p, lab)
        if key not in delta:
            qs = [q for q in range(problem.size) if cnf.d(p, li, q) in model]
            delta[key] = qs[0]
        state[c] = delta[key]
    return delta, conflicts
