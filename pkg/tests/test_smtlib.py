import os
import stat
from fractions import Fraction

import pytest
from hypothesis import given, settings

from oracle import satisfiable
from strategies import PROPS, eps_values, trace_sets
from srm_lab import PropositionSet, Trace, eps_consistent
from srm_lab.infer import Budget, SolverBackend, SolverError, emit_smtlib, encode, infer_minimal, solve
from srm_lab.infer.smtlib import parse_model, parse_response, real, resolve_solver

P1 = PropositionSet(["l1"])
L1 = P1.label("l1")
Z3 = resolve_solver(None)
needs_z3 = pytest.mark.skipif(Z3 is None, reason="no SMT solver on PATH")


def test_script_shape():
    text = emit_smtlib(encode([], 1, 0.0, P1))
    assert text.startswith("(set-option :produce-models true)\n(set-logic QF_LRA)")
    assert text.rstrip().endswith("(check-sat)\n(get-model)")
    assert "(declare-fun d_0_0_0 () Bool)" in text
    assert "(declare-fun o_0_0 () Real)" in text
    assert text.count("(") == text.count(")")


def test_output_bounds_are_two_linear_constraints():
    problem = encode([Trace((L1,), (1.0,))], 1, 0.5, P1, tol=0.0)
    li = problem.label_index[L1]
    text = emit_smtlib(problem)
    assert f"(<= o_0_{li} (/ 3.0 2.0))" in text
    assert f"(>= o_0_{li} (/ 1.0 2.0))" in text


def test_real_literals_are_exact():
    assert real(0.5) == "(/ 1.0 2.0)"
    assert real(-3) == "(- 3.0)"
    assert real(0.1) == "(/ 3602879701896397.0 36028797018963968.0)"


def test_model_parsing():
    text = """sat
(
  (define-fun d_0_0_0 () Bool true)
  (define-fun x_1_0 () Bool false)
  (define-fun o_0_0 () Real (/ (- 3.0) 4.0))
  (define-fun o_0_1 () Real 2.5)
)"""
    status, model = parse_response(text)
    assert status == "sat"
    assert model == {"d_0_0_0": True, "x_1_0": False, "o_0_0": Fraction(-3, 4), "o_0_1": Fraction(5, 2)}
    assert parse_response("unsat\n") == ("unsat", {})
    assert parse_model("(model (define-fun |a b| () Bool true))") == {"a b": True}


def test_garbage_rejected():
    with pytest.raises(SolverError):
        parse_response("")
    with pytest.raises(SolverError):
        parse_response("(error oops)")
    with pytest.raises(SolverError):
        parse_response("sat\n((define-fun a () Bool true)")


def _script(tmp_path, body):
    path = tmp_path / "fake-solver"
    path.write_text("#!/bin/sh\ncat > /dev/null\n" + body)
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return str(path)


def test_solver_unknown_is_an_error(tmp_path):
    backend = SolverBackend.parse("smt:" + _script(tmp_path, "echo unknown\n"))
    with pytest.raises(SolverError):
        solve(encode([], 1, 0.0, P1), backend)


def test_missing_solver_is_an_error(tmp_path, monkeypatch):
    monkeypatch.delenv("SRM_LAB_SMT_SOLVER", raising=False)
    backend = SolverBackend.parse("smt:" + str(tmp_path / "nope"))
    with pytest.raises(SolverError):
        solve(encode([], 1, 0.0, P1), backend)


def test_solver_failure_surfaces_through_driver_path(tmp_path):
    backend = SolverBackend.parse("smt:" + _script(tmp_path, "echo '(error \"boom\")'\n"))
    with pytest.raises(SolverError):
        infer_minimal([Trace((L1,), (1.0,))], 0.0, backend)


def test_slow_solver_times_out(tmp_path):
    backend = SolverBackend.parse("smt:" + _script(tmp_path, "sleep 5\necho sat\n"))
    res = infer_minimal([Trace((L1,), (1.0,))], 0.0, backend, budget=Budget(0.5))
    assert res.status == "timeout"


def test_env_override(tmp_path, monkeypatch):
    fake = _script(tmp_path, "echo unsat\n")
    monkeypatch.setenv("SRM_LAB_SMT_SOLVER", fake)
    assert resolve_solver("z3") == fake
    assert solve(encode([], 1, 0.0, P1), SolverBackend.parse("smt")) is None


def test_backend_parse():
    assert SolverBackend.parse(None).kind == "internal"
    assert SolverBackend.parse("sat").kind == "sat"
    assert SolverBackend.parse("smt:/bin/z3") == SolverBackend("smtlib-process", "/bin/z3")
    with pytest.raises(ValueError):
        SolverBackend.parse("cplex")


@needs_z3
def test_z3_empty_problem_gives_one_state():
    m = solve(encode([], 1, 0.0, P1), SolverBackend.parse("smt"))
    assert m is not None and len(m.states) == 1


@needs_z3
@settings(max_examples=40, deadline=None)
@given(trace_sets, eps_values)
def test_z3_matches_internal(X, eps):
    for n in (1, 2):
        problem = encode(X, n, eps, PROPS)
        ext = solve(problem, SolverBackend.parse("smt"))
        assert (ext is not None) == (solve(problem) is not None) == satisfiable(X, n, eps)
        if ext is not None:
            assert all(eps_consistent(t, ext, eps) for t in X)
