"""Prefix tree of a counterexample set and the size-n constraint problem.

The problem has boolean transition variables d[p, l, q], real output
variables o[v, l] and boolean run variables x[u, v] (u a prefix-tree node),
constrained by:

  1. the empty prefix runs to the initial state 0 and to no other state;
  2. every (p, l) has exactly one successor q;
  3. x[u, p] and d[p, l, q] imply x[u.l, q];
  4. x[u, v] implies |o[v, l] - r| <= eps for every reward r seen on u.l.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from ..core import EMPTY, TOL, PropositionSet


class PrefixTree:
    """Label-sequence prefixes of a trace set.

    Node 0 is the empty prefix; nodes are numbered breadth-first.  Each edge
    ``(node, label)`` keeps the distinct rewards observed on it, so every
    node stores the multiset of (next label, reward) pairs seen after it.
    """

    def __init__(self, traces=()):
        children = [{}]
        rewards = [{}]
        for t in traces:
            u = 0
            for lab, r in zip(t.labels, t.rewards):
                c = children[u].get(lab)
                if c is None:
                    c = len(children)
                    children[u][lab] = c
                    children.append({})
                    rewards.append({})
                    rewards[u][lab] = []
                rewards[u][lab].append(float(r))
                u = c
        # renumber breadth-first so node ids follow prefix length
        order = [0]
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for c in children[u].values():
                order.append(c)
                queue.append(c)
        new = {old: i for i, old in enumerate(order)}
        self.children = [None] * len(order)
        self.rewards = [None] * len(order)
        self.parent = [-1] * len(order)
        self.via = [None] * len(order)
        for old, i in new.items():
            self.children[i] = {lab: new[c] for lab, c in children[old].items()}
            self.rewards[i] = {lab: sorted(set(rs)) for lab, rs in rewards[old].items()}
            for lab, c in self.children[i].items():
                self.parent[c] = i
                self.via[c] = lab

    def __len__(self):
        return len(self.children)

    def edges(self):
        """Yield ``(node, label, child, rewards)`` for every edge."""
        for u, ch in enumerate(self.children):
            for lab, c in ch.items():
                yield u, lab, c, self.rewards[u][lab]

    def labels(self) -> set:
        return {lab for ch in self.children for lab in ch}

    def widest_edge(self) -> float:
        """Largest reward range on a single edge (shared prefix)."""
        return max((rs[-1] - rs[0] for _, _, _, rs in self.edges()), default=0.0)

    def prefix(self, u: int) -> tuple:
        out = []
        while u > 0:
            out.append(self.via[u])
            u = self.parent[u]
        return tuple(reversed(out))


@dataclass
class ConstraintProblem:
    size: int
    eps: float
    propositions: PropositionSet
    alphabet: list
    tree: PrefixTree
    tol: float = TOL
    label_index: dict = field(init=False)

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("size must be at least 1")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        self.label_index = {lab: i for i, lab in enumerate(self.alphabet)}

    @property
    def radius(self) -> float:
        """Allowed distance between an output mean and an observed reward."""
        return self.eps + self.tol / 2

    def d(self, p, li, q) -> str:
        return f"d_{p}_{li}_{q}"

    def o(self, v, li) -> str:
        return f"o_{v}_{li}"

    def x(self, u, v) -> str:
        return f"x_{u}_{v}"

    def prefix_conflict(self) -> bool:
        """True when some shared prefix already carries rewards further apart
        than 2*eps, which no machine of any size can reconcile."""
        return self.tree.widest_edge() > 2 * self.eps + self.tol


def encode(traces, size: int, eps: float, propositions: PropositionSet | None = None, tol: float = TOL):
    traces = list(traces)
    tree = PrefixTree(traces)
    labels = tree.labels() | {EMPTY}
    if propositions is None:
        names = sorted({m for lab in labels for m in lab})
        propositions = PropositionSet(names)
    for lab in labels:
        propositions.validate(lab)
    alphabet = propositions.sorted_labels(labels)
    return ConstraintProblem(size, float(eps), propositions, alphabet, tree, tol)
