"""SMT-LIB2 (QF_LRA) emission of the constraint problem, model parsing, and
an external solver run as a child process."""
from __future__ import annotations

import os
import shutil
import subprocess
import time
from fractions import Fraction

from .search import SolverTimeout

SOLVER_ENV = "SRM_LAB_SMT_SOLVER"


class SolverError(RuntimeError):
    pass


def real(value) -> str:
    """Exact SMT-LIB real literal for a float or Fraction."""
    f = Fraction(value)
    num, den = abs(f.numerator), f.denominator
    body = f"{num}.0" if den == 1 else f"(/ {num}.0 {den}.0)"
    return f"(- {body})" if f < 0 else body


def emit_smtlib(problem) -> str:
    n = problem.size
    E = len(problem.alphabet)
    tree = problem.tree
    radius = Fraction(problem.eps) + Fraction(problem.tol) / 2
    out = ["(set-option :produce-models true)", "(set-logic QF_LRA)"]
    for p in range(n):
        for li in range(E):
            for q in range(n):
                out.append(f"(declare-fun {problem.d(p, li, q)} () Bool)")
            out.append(f"(declare-fun {problem.o(p, li)} () Real)")
    for u in range(len(tree)):
        for v in range(n):
            out.append(f"(declare-fun {problem.x(u, v)} () Bool)")

    out.append("; initial state")
    out.append(f"(assert {problem.x(0, 0)})")
    for v in range(1, n):
        out.append(f"(assert (not {problem.x(0, v)}))")

    out.append("; exactly one successor per state and label")
    for p in range(n):
        for li in range(E):
            ds = [problem.d(p, li, q) for q in range(n)]
            out.append(f"(assert {ds[0]})" if n == 1 else f"(assert (or {' '.join(ds)}))")
            for i in range(n):
                for j in range(i + 1, n):
                    out.append(f"(assert (or (not {ds[i]}) (not {ds[j]})))")

    out.append("; runs follow transitions")
    li_of = problem.label_index
    for u, lab, c, _ in tree.edges():
        li = li_of[lab]
        for p in range(n):
            for q in range(n):
                out.append(
                    f"(assert (=> (and {problem.x(u, p)} {problem.d(p, li, q)}) {problem.x(c, q)}))"
                )

    out.append("; outputs within eps of every observed reward")
    for u, lab, c, rewards in tree.edges():
        li = li_of[lab]
        for v in range(n):
            bounds = []
            for r in rewards:
                o = problem.o(v, li)
                bounds.append(f"(<= {o} {real(Fraction(r) + radius)})")
                bounds.append(f"(>= {o} {real(Fraction(r) - radius)})")
            out.append(f"(assert (=> {problem.x(u, v)} (and {' '.join(bounds)})))")
    out.append("(check-sat)")
    out.append("(get-model)")
    return "\n".join(out) + "\n"


def tokenize(text: str):
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch in "()":
            yield ch
            i += 1
        elif ch.isspace():
            i += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch == '"':
            j = text.index('"', i + 1)
            yield text[i : j + 1]
            i = j + 1
        elif ch == "|":
            j = text.index("|", i + 1)
            yield text[i + 1 : j]
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            yield text[i:j]
            i = j


def parse_sexprs(text: str) -> list:
    stack = [[]]
    for tok in tokenize(text):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise SolverError("unbalanced ')' in solver output")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    if len(stack) != 1:
        raise SolverError("unbalanced '(' in solver output")
    return stack[0]


def _value(term):
    if isinstance(term, str):
        if term == "true":
            return True
        if term == "false":
            return False
        return Fraction(term)
    head, *args = term
    vals = [_value(a) for a in args]
    if head == "-":
        return -vals[0] if len(vals) == 1 else vals[0] - sum(vals[1:])
    if head == "+":
        return sum(vals)
    if head == "*":
        out = Fraction(1)
        for v in vals:
            out *= v
        return out
    if head == "/":
        return vals[0] / vals[1]
    raise SolverError(f"cannot evaluate model term {term!r}")


def parse_model(text: str) -> dict:
    """``{name: bool | Fraction}`` from a ``(get-model)`` response."""
    out = {}

    def walk(node):
        if isinstance(node, list):
            if len(node) == 5 and node[0] == "define-fun" and node[2] == []:
                out[node[1]] = _value(node[4])
            else:
                for child in node:
                    walk(child)

    walk(parse_sexprs(text))
    return out


def parse_response(text: str):
    """``(status, model)`` where status is 'sat', 'unsat' or 'unknown'."""
    lines = text.strip().splitlines()
    if not lines:
        raise SolverError("empty solver output")
    status = lines[0].strip()
    if status not in ("sat", "unsat", "unknown"):
        raise SolverError(f"unexpected solver output: {lines[0]!r}")
    model = parse_model("\n".join(lines[1:])) if status == "sat" else {}
    return status, model


_ARGS = {"z3": ["-in", "-smt2"], "cvc5": ["--lang=smt2"], "cvc4": ["--lang=smt2"]}


def resolve_solver(path: str | None) -> str | None:
    path = os.environ.get(SOLVER_ENV) or path
    if not path:
        return shutil.which("z3")
    found = shutil.which(path)
    return found or (path if os.path.exists(path) else None)


def run_solver(script: str, path: str, timeout: float | None = None) -> str:
    base = os.path.basename(path)
    args = next((a for key, a in _ARGS.items() if base.startswith(key)), [])
    t0 = time.monotonic()
    try:
        proc = subprocess.run(
            [path, *args], input=script, capture_output=True, text=True, timeout=timeout
        )
    except subprocess.TimeoutExpired as exc:
        raise SolverTimeout("external solver timed out", 0, time.monotonic() - t0) from exc
    except OSError as exc:
        raise SolverError(f"cannot run solver {path!r}: {exc}") from exc
    if proc.returncode != 0 and not proc.stdout.strip().startswith(("sat", "unsat")):
        raise SolverError(f"solver {path!r} failed ({proc.returncode}): {proc.stderr.strip()[:200]}")
    return proc.stdout
