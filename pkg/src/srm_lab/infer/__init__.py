"""Minimal eps-consistent machine inference from a counterexample set."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

from ..core import SRM, TOL, OutputDist, PropositionSet
from .cnf import solve_cnf
from .encoding import ConstraintProblem, PrefixTree, encode
from .search import SolverTimeout, search
from .smtlib import SolverError, emit_smtlib, parse_response, resolve_solver, run_solver

__all__ = [
    "Budget",
    "ConstraintProblem",
    "InferenceResult",
    "PrefixTree",
    "SolverBackend",
    "SolverError",
    "SolverTimeout",
    "emit_smtlib",
    "encode",
    "infer_minimal",
    "shift_repair",
    "solve",
]


@dataclass(frozen=True)
class SolverBackend:
    kind: str = "internal"  # "internal", "sat" or "smtlib-process"
    path: str | None = None

    @classmethod
    def parse(cls, spec: str | None) -> "SolverBackend":
        """``internal`` (backtracking search), ``sat`` (in-process CDCL),
        ``smt`` (SMT solver found on PATH) or ``smt:<path>``."""
        if not spec or spec == "internal":
            return cls()
        if spec == "sat":
            return cls("sat", None)
        if spec == "smt":
            return cls("smtlib-process", None)
        if spec.startswith("smt:"):
            return cls("smtlib-process", spec[4:])
        raise ValueError(f"unknown backend {spec!r}")


INTERNAL = SolverBackend()


@dataclass(frozen=True)
class Budget:
    """Per-size limits.  ``nodes_per_size`` counts search nodes for the
    internal backend and conflicts for the sat backend."""

    seconds_per_size: float | None = 60.0
    nodes_per_size: int | None = None
    total_seconds: float | None = None


@dataclass
class InferenceResult:
    status: str  # "sat", "cap_hit" or "timeout"
    machine: SRM | None = None
    size: int | None = None
    nodes: int = 0
    seconds: float = 0.0
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "sat"


def _machine(problem, delta, means) -> SRM:
    n = problem.size
    trans = {
        (p, lab): (q, OutputDist(float(means[(p, lab)]), problem.eps))
        for (p, lab), q in delta.items()
    }
    machine = SRM(problem.propositions, tuple(range(n)), 0, trans, frozenset())
    # soundness recheck against every observed reward
    tree = problem.tree
    state = [0] * len(tree)
    lim = problem.eps + problem.tol
    for u, lab, c, rewards in tree.edges():
        nxt, dist = machine.step(state[u], lab)
        state[c] = nxt
        if rewards[-1] - dist.mean > lim or dist.mean - rewards[0] > lim:
            raise SolverError("solver returned a machine inconsistent with the traces")
    return machine


def _solve_smt(problem, backend, timeout):
    path = resolve_solver(backend.path)
    if path is None:
        raise SolverError(f"no SMT solver found (backend path {backend.path!r})")
    status, model = parse_response(run_solver(emit_smtlib(problem), path, timeout))
    if status == "unknown":
        raise SolverError("solver answered unknown")
    if status == "unsat":
        return None, None
    n = problem.size
    delta = {}
    for p in range(n):
        for li, lab in enumerate(problem.alphabet):
            qs = [q for q in range(n) if model.get(problem.d(p, li, q), False)]
            if len(qs) != 1:
                raise SolverError(f"model has {len(qs)} successors for d_{p}_{li}")
            delta[(p, lab)] = qs[0]
    delta, means = _exercised(problem, delta)
    return delta, means


def _exercised(problem, delta):
    """Restrict ``delta`` to the transitions the prefix tree runs through and
    give each the midpoint of its observed reward range (the centre of the
    feasible interval for its output)."""
    lo, hi = {}, {}
    state = [0] * len(problem.tree)
    for u, lab, c, rewards in problem.tree.edges():
        key = (state[u], lab)
        state[c] = delta[key]
        lo[key] = min(lo.get(key, math.inf), rewards[0])
        hi[key] = max(hi.get(key, -math.inf), rewards[-1])
    kept = {key: delta[key] for key in lo}
    return kept, {key: (lo[key] + hi[key]) / 2 for key in lo}


def _solve(problem, backend, budget, hint=None):
    budget = budget or Budget()
    t0 = time.monotonic()
    if backend.kind == "internal":
        res = search(problem, budget.nodes_per_size, budget.seconds_per_size)
        delta, means, nodes = res.delta, res.means, res.nodes
    elif backend.kind == "sat":
        delta, nodes = solve_cnf(
            problem, budget.nodes_per_size, budget.seconds_per_size, hint=hint
        )
        means = None
        if delta is not None:
            delta, means = _exercised(problem, delta)
    elif backend.kind == "smtlib-process":
        delta, means = _solve_smt(problem, backend, budget.seconds_per_size)
        nodes = 0
    else:
        raise ValueError(f"unknown backend kind {backend.kind!r}")
    machine = None if delta is None else _machine(problem, delta, means)
    return machine, nodes, time.monotonic() - t0


def solve(problem: ConstraintProblem, backend: SolverBackend = INTERNAL, budget: Budget | None = None):
    """A size-n machine satisfying the problem, or None when unsatisfiable.

    Raises :class:`SolverTimeout` when the budget runs out and
    :class:`SolverError` when an external solver misbehaves.
    """
    return _solve(problem, backend, budget)[0]


def infer_minimal(
    traces,
    eps: float,
    backend: SolverBackend = INTERNAL,
    size_cap: int = 10,
    budget: Budget | None = None,
    propositions: PropositionSet | None = None,
    start_size: int = 1,
    hint: dict | None = None,
) -> InferenceResult:
    """Smallest consistent machine, trying sizes ``start_size``, ... up to
    ``size_cap``.

    Callers pass ``start_size`` > 1 only when every smaller size is known to
    be unsatisfiable (e.g. it was refuted for a subset of ``traces``).
    ``hint`` maps ``(state, label)`` to a suggested successor.
    """
    if size_cap < 1:
        raise ValueError("size_cap must be at least 1")
    if start_size < 1:
        raise ValueError("start_size must be at least 1")
    traces = list(traces)
    budget = budget or Budget()
    t0 = time.monotonic()
    nodes = 0
    first = encode(traces, 1, eps, propositions)
    if first.prefix_conflict():
        return InferenceResult("cap_hit", None, None, 0, time.monotonic() - t0, "prefix-conflict")
    for n in range(start_size, size_cap + 1):
        problem = ConstraintProblem(n, first.eps, first.propositions, first.alphabet, first.tree)
        if budget.total_seconds is not None:
            left = budget.total_seconds - (time.monotonic() - t0)
            if left <= 0:
                return InferenceResult("timeout", None, n, nodes, time.monotonic() - t0, "total budget")
            per = budget.seconds_per_size
            budget_n = Budget(left if per is None else min(per, left), budget.nodes_per_size)
        else:
            budget_n = budget
        try:
            machine, k, _ = _solve(problem, backend, budget_n, hint)
        except SolverTimeout as exc:
            return InferenceResult("timeout", None, n, nodes + exc.nodes, time.monotonic() - t0, str(exc))
        nodes += k
        if machine is not None:
            return InferenceResult("sat", machine, n, nodes, time.monotonic() - t0)
    return InferenceResult("cap_hit", None, size_cap, nodes, time.monotonic() - t0, "size cap")


def shift_repair(hypothesis: SRM, traces, eps: float):
    """Same structure, outputs moved to the midrange of the rewards each
    transition receives from ``traces``; None when some transition's rewards
    span more than 2*eps (no output shift can fix it)."""
    lo, hi = {}, {}
    trans = hypothesis.transitions
    for t in traces:
        v = hypothesis.initial
        for lab, r in zip(t.labels, t.rewards):
            key = (v, lab)
            l = lo.get(key, math.inf)
            h = hi.get(key, -math.inf)
            if r < l:
                lo[key] = l = r
            if r > h:
                hi[key] = h = r
            if h - l > 2 * eps + TOL:
                return None
            hit = trans.get(key)
            if hit is not None:
                v = hit[0]
    return hypothesis.replace_outputs({k: (lo[k] + hi[k]) / 2 for k in lo}, half_width=eps)
