"""Labels, traces and stochastic reward machines.

A machine is a deterministic transducer over labels (subsets of a fixed
proposition set).  Each transition emits an interval distribution given by
its mean and half-width.  Transitions that are not listed explicitly are
self-loops with a deterministic output of 0.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

# Absolute slack used by every consistency test in the package.  Keeps
# boundary cases such as |1.05 - 1.0| <= 0.05 from flipping on float rounding.
TOL = 1e-9

Label = frozenset
State = Hashable

EMPTY = frozenset()


class PropositionSet:
    """Ordered, duplicate-free tuple of proposition names."""

    __slots__ = ("names", "_index")

    def __init__(self, names: Iterable[str]):
        names = tuple(names)
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate proposition names in {names!r}")
        self.names = names
        self._index = {name: i for i, name in enumerate(names)}

    def __iter__(self):
        return iter(self.names)

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self._index

    def __eq__(self, other):
        return isinstance(other, PropositionSet) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    def __repr__(self):
        return f"PropositionSet({list(self.names)!r})"

    def label(self, *members: str) -> Label:
        lab = frozenset(members)
        self.validate(lab)
        return lab

    def validate(self, label: Label) -> None:
        for m in label:
            if m not in self._index:
                raise ValueError(f"unknown proposition {m!r} in label {sorted(label)}")

    def key(self, label: Label) -> int:
        """Bitset value of a label; the canonical label order."""
        k = 0
        for m in label:
            k |= 1 << self._index[m]
        return k

    def sorted_labels(self, labels: Iterable[Label]) -> list:
        return sorted(set(labels), key=self.key)

    def all_labels(self) -> list:
        """Every label in 2^P, in bitset order.  Exponential; small P only."""
        out = []
        for k in range(1 << len(self.names)):
            out.append(frozenset(n for i, n in enumerate(self.names) if k >> i & 1))
        return out


def format_label(label: Label, props: PropositionSet | None = None) -> str:
    if not label:
        return "∅"
    members = sorted(label, key=props._index.__getitem__) if props else sorted(label)
    return "{" + ",".join(members) + "}"


@dataclass(frozen=True)
class Trace:
    labels: tuple
    rewards: tuple

    def __post_init__(self):
        labels = tuple(frozenset(l) for l in self.labels)
        rewards = tuple(float(r) for r in self.rewards)
        if len(labels) != len(rewards):
            raise ValueError(f"trace has {len(labels)} labels but {len(rewards)} rewards")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "rewards", rewards)

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class OutputDist:
    mean: float
    half_width: float = 0.0
    family: str = "uniform"

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError(f"negative half-width {self.half_width}")
        if self.family != "uniform":
            raise ValueError(f"unsupported output family {self.family!r}")

    @property
    def low(self) -> float:
        return self.mean - self.half_width

    @property
    def high(self) -> float:
        return self.mean + self.half_width

    def sample(self, rng: np.random.Generator) -> float:
        if self.half_width == 0:
            return float(self.mean)
        return float(rng.uniform(self.low, self.high))

    def with_mean(self, mean: float) -> "OutputDist":
        return OutputDist(float(mean), self.half_width, self.family)


ZERO = OutputDist(0.0, 0.0)


@dataclass(frozen=True, eq=False)
class SRM:
    """Stochastic reward machine.

    ``transitions`` maps ``(state, label)`` to ``(next_state, OutputDist)``.
    Missing entries follow the self-loop / zero-output convention.
    """

    propositions: PropositionSet
    states: tuple
    initial: State
    transitions: Mapping = field(default_factory=dict)
    terminal: frozenset = frozenset()

    def __post_init__(self):
        states = tuple(self.states)
        if not states:
            raise ValueError("a machine needs at least one state")
        if len(set(states)) != len(states):
            raise ValueError("duplicate state ids")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "terminal", frozenset(self.terminal))
        known = set(states)
        if self.initial not in known:
            raise ValueError(f"initial state {self.initial!r} is not a state")
        if not self.terminal <= known:
            raise ValueError("terminal states must be states")
        trans = {}
        out = {}
        for (v, lab), (nxt, dist) in dict(self.transitions).items():
            lab = frozenset(lab)
            self.propositions.validate(lab)
            if v not in known or nxt not in known:
                raise ValueError(f"transition {v!r} -> {nxt!r} uses an unknown state")
            if not isinstance(dist, OutputDist):
                dist = OutputDist(*dist)
            trans[(v, lab)] = (nxt, dist)
            out.setdefault(v, []).append(lab)
        object.__setattr__(self, "transitions", trans)
        # explicit labels per state, canonical order
        object.__setattr__(
            self, "_out", {v: tuple(self.propositions.sorted_labels(ls)) for v, ls in out.items()}
        )
        object.__setattr__(self, "_valid", set())

    def __len__(self):
        return len(self.states)

    def __repr__(self):
        return f"SRM(size={len(self.states)}, transitions={len(self.transitions)})"

    def __eq__(self, other):
        if not isinstance(other, SRM):
            return NotImplemented
        return (
            self.propositions == other.propositions
            and self.states == other.states
            and self.initial == other.initial
            and self.terminal == other.terminal
            and self.transitions == other.transitions
        )

    __hash__ = None

    def check_label(self, label: Label) -> None:
        if label not in self._valid:
            self.propositions.validate(label)
            self._valid.add(label)

    def step(self, state: State, label: Label):
        """(next_state, OutputDist) for one transition."""
        hit = self.transitions.get((state, label))
        if hit is None:
            return state, ZERO
        return hit

    def delta(self, state, label):
        return self.step(state, label)[0]

    def sigma(self, state, label) -> OutputDist:
        return self.step(state, label)[1]

    def explicit_labels(self, state) -> tuple:
        return self._out.get(state, ())

    def alphabet(self) -> list:
        """Labels mentioned by explicit transitions, canonical order."""
        return self.propositions.sorted_labels(lab for (_, lab) in self.transitions)

    def outputs(self) -> set:
        """Output alphabet, including the implicit zero output."""
        dists = {d for (_, d) in self.transitions.values()}
        dists.add(ZERO)
        return dists

    def replace_outputs(self, means: Mapping, half_width: float | None = None) -> "SRM":
        """Copy with new means on the given ``(state, label)`` pairs.

        Pairs that are only implicit become explicit self-loops.  When
        ``half_width`` is given, every explicit output gets that half-width.
        """
        trans = dict(self.transitions)
        for (v, lab), mean in means.items():
            nxt, dist = self.step(v, lab)
            trans[(v, lab)] = (nxt, dist.with_mean(mean))
        if half_width is not None:
            trans = {
                k: (nxt, OutputDist(d.mean, half_width, d.family)) for k, (nxt, d) in trans.items()
            }
        return SRM(self.propositions, self.states, self.initial, trans, self.terminal)


def single_state(props: PropositionSet, half_width: float = 0.0, state=0) -> SRM:
    """One state, every label a zero-mean self-loop."""
    return SRM(props, (state,), state, {}, frozenset())


def run(machine: SRM, labels: Sequence[Label]):
    """States visited (k+1 of them) and output means (k of them)."""
    v = machine.initial
    states = [v]
    means = []
    trans = machine.transitions
    for lab in labels:
        machine.check_label(lab)
        hit = trans.get((v, lab))
        if hit is None:
            means.append(0.0)
        else:
            v = hit[0]
            means.append(hit[1].mean)
        states.append(v)
    return states, means


def sample_run(machine: SRM, labels: Sequence[Label], rng: np.random.Generator) -> Trace:
    v = machine.initial
    rewards = []
    for lab in labels:
        machine.check_label(lab)
        v, dist = machine.step(v, lab)
        rewards.append(dist.sample(rng))
    return Trace(tuple(labels), tuple(rewards))


def eps_consistent(trace: Trace, machine: SRM, eps: float) -> bool:
    """Every observed reward lies within ``eps`` of the machine's mean."""
    v = machine.initial
    trans = machine.transitions
    lim = eps + TOL
    for lab, r in zip(trace.labels, trace.rewards):
        machine.check_label(lab)
        hit = trans.get((v, lab))
        if hit is None:
            if abs(r) > lim:
                return False
        else:
            v = hit[0]
            if abs(r - hit[1].mean) > lim:
                return False
    return True


def check_assumption(outputs: Iterable[OutputDist], eps: float) -> bool:
    """Outputs that fit together inside a width-2*eps window share a mean,
    and no output is wider than eps."""
    outs = list(outputs)
    if any(o.half_width > eps + TOL for o in outs):
        return False
    for i, a in enumerate(outs):
        for b in outs[i + 1:]:
            span = max(a.high, b.high) - min(a.low, b.low)
            if span <= 2 * eps + TOL and abs(a.mean - b.mean) > TOL:
                return False
    return True


def canonical_order(machine: SRM) -> tuple:
    """(reachable states in BFS order with labels in bitset order,
    unreachable states in their original order)."""
    seen = {machine.initial}
    order = [machine.initial]
    queue = deque(order)
    while queue:
        v = queue.popleft()
        for lab in machine.explicit_labels(v):
            nxt = machine.transitions[(v, lab)][0]
            if nxt not in seen:
                seen.add(nxt)
                order.append(nxt)
                queue.append(nxt)
    reachable = len(order)
    order.extend(v for v in machine.states if v not in seen)
    return order[:reachable], order[reachable:]


def canonical_form(machine: SRM) -> SRM:
    """Renumber reachable states 0..k-1 in BFS order and drop the rest."""
    reach, _ = canonical_order(machine)
    ids = {v: i for i, v in enumerate(reach)}
    trans = {}
    for (v, lab), (nxt, dist) in machine.transitions.items():
        if v in ids:
            trans[(ids[v], lab)] = (ids[nxt], dist)
    terminal = frozenset(ids[v] for v in machine.terminal if v in ids)
    return SRM(machine.propositions, tuple(range(len(reach))), 0, trans, terminal)


def delta_table(machine: SRM) -> tuple:
    """Hashable view of the total transition function (self-loops omitted)."""
    key = machine.propositions.key
    rows = [
        (v, key(lab), nxt) for (v, lab), (nxt, _) in machine.transitions.items() if nxt != v
    ]
    return tuple(sorted(rows, key=lambda row: (repr(row[0]), row[1])))


def mean_table(machine: SRM) -> tuple:
    """Hashable view of the non-zero output means."""
    key = machine.propositions.key
    rows = [
        (v, key(lab), d.mean) for (v, lab), (_, d) in machine.transitions.items() if d.mean != 0
    ]
    return tuple(sorted(rows, key=lambda row: (repr(row[0]), row[1])))


def expectation_witness(a: SRM, b: SRM, tol: float = 1e-9, within=None):
    """A label sequence on which the two machines' expected outputs differ
    by more than ``tol``, or None.

    Without ``within`` this is a BFS over reachable state pairs.  With
    ``within`` (an iterable of label sequences, e.g. the traces seen while
    learning) only the pairs and labels those sequences visit are compared.
    """
    if a.propositions != b.propositions:
        raise ValueError("machines use different proposition sets")
    if within is not None:
        for labels in within:
            va, vb = a.initial, b.initial
            for i, lab in enumerate(labels):
                na, da = a.step(va, lab)
                nb, db = b.step(vb, lab)
                if abs(da.mean - db.mean) > tol:
                    return tuple(labels[: i + 1])
                va, vb = na, nb
        return None
    start = (a.initial, b.initial)
    parent = {start: None}
    queue = deque([start])
    while queue:
        pair = queue.popleft()
        va, vb = pair
        labels = set(a.explicit_labels(va)) | set(b.explicit_labels(vb))
        for lab in a.propositions.sorted_labels(labels):
            na, da = a.step(va, lab)
            nb, db = b.step(vb, lab)
            if abs(da.mean - db.mean) > tol:
                path = [lab]
                node = pair
                while parent[node] is not None:
                    node, l = parent[node]
                    path.append(l)
                return tuple(reversed(path))
            nxt = (na, nb)
            if nxt not in parent:
                parent[nxt] = (pair, lab)
                queue.append(nxt)
    return None


def equivalent_in_expectation(a: SRM, b: SRM, tol: float = 1e-9, within=None) -> bool:
    return expectation_witness(a, b, tol, within) is None
