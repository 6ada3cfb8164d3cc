import itertools

import numpy as np
import pytest
from hypothesis import given, settings

from oracle import minimal_size, satisfiable
from strategies import PROPS, eps_values, trace_sets
from srm_lab import EMPTY, SRM, OutputDist, PropositionSet, Trace, canonical_form, eps_consistent
from srm_lab.core import sample_run, single_state
from srm_lab.envs import mining_ground_truth
from srm_lab.infer import (
    Budget,
    PrefixTree,
    SolverBackend,
    SolverTimeout,
    encode,
    infer_minimal,
    shift_repair,
    solve,
)
from srm_lab.infer.search import greedy_clique, incompatibility, search

P1 = PropositionSet(["l1", "l2"])
L1, L2 = P1.label("l1"), P1.label("l2")
BACKENDS = [SolverBackend.parse("internal"), SolverBackend.parse("sat")]


def ids(b):
    return b.kind


def test_prefix_tree_shape():
    tree = PrefixTree([Trace((L1, L2), (0, 1)), Trace((L1, L1), (2, 3)), Trace((L2,), (5,))])
    assert len(tree) == 5
    assert tree.children[0] == {L1: 1, L2: 2}
    assert tree.rewards[0][L1] == [0.0, 2.0]
    assert tree.prefix(3) in {(L1, L2), (L1, L1)}
    assert tree.widest_edge() == 2.0


@pytest.mark.parametrize("backend", BACKENDS, ids=ids)
def test_empty_set_single_state(backend):
    assert solve(encode([], 1, 0.0, P1), backend) is not None
    res = infer_minimal([], 0.5, backend, propositions=P1)
    assert res.ok and res.size == 1


@pytest.mark.parametrize("backend", BACKENDS, ids=ids)
def test_shared_prefix_too_wide_is_unsat(backend):
    X = [Trace((L1,), (0,)), Trace((L1,), (3,))]
    for n in (1, 2, 3):
        assert solve(encode(X, n, 1.0), backend) is None
        assert not satisfiable(X, n, 1.0)
    res = infer_minimal(X, 1.0, backend, size_cap=3)
    assert res.status == "cap_hit" and not res.ok


@pytest.mark.parametrize("backend", BACKENDS, ids=ids)
def test_interval_intersection(backend):
    X = [Trace((L1,), (0,)), Trace((L1,), (1.5,))]
    m = solve(encode(X, 1, 1.0), backend)
    assert 0.5 <= m.sigma(0, L1).mean <= 1.0
    assert m.sigma(0, L1).half_width == 1.0


@pytest.mark.parametrize("backend", BACKENDS, ids=ids)
def test_two_output_single_state_example(backend):
    rng = np.random.default_rng(0)
    env = SRM(P1, (0,), 0, {(0, L1): (0, OutputDist(0.5, 0.5)), (0, L2): (0, OutputDist(55, 45))})
    X = [sample_run(env, tuple(rng.choice([L1, L2], 5)), rng) for _ in range(20)]
    m = solve(encode(X, 1, 45.0), backend)
    assert -44 <= m.sigma(0, L1).mean <= 45
    assert all(eps_consistent(t, m, 45.0) for t in X)
    assert infer_minimal(X, 45.0, backend).size == 1


def test_budget_exhaustion_is_reported():
    # a random binary reward string needs a large machine; tiny budgets run out
    rng = np.random.default_rng(1)
    X = [Trace(tuple(rng.choice([L1, L2], 40)), tuple(rng.integers(0, 2, 40).astype(float)))]
    with pytest.raises(SolverTimeout):
        search(encode(X, 8, 0.0), node_budget=20)
    for backend in BACKENDS:
        res = infer_minimal(X, 0.0, backend, size_cap=10, budget=Budget(None, 1))
        assert res.status == "timeout" and not res.ok


def test_prefix_conflict_reported_as_cap_hit():
    res = infer_minimal([Trace((L1,), (0,)), Trace((L1,), (5,))], 1.0)
    assert res.status == "cap_hit" and res.reason == "prefix-conflict"


def test_size_cap_validated():
    with pytest.raises(ValueError):
        infer_minimal([], 0.0, size_cap=0)


@pytest.mark.parametrize("backend", BACKENDS, ids=ids)
def test_mining_paths_recover_truth_size(backend):
    truth = mining_ground_truth(deterministic=True)
    props = truth.propositions
    alphabet = [EMPTY] + [props.label(x) for x in props]
    rng = np.random.default_rng(0)
    # every word of length 4 reaches and leaves each state
    X = [sample_run(truth, seq, rng) for seq in itertools.product(alphabet, repeat=4)]
    res = infer_minimal(X, 0.0, backend, size_cap=6, propositions=props)
    assert res.size == len(canonical_form(truth).states)
    assert all(eps_consistent(t, res.machine, 0.0) for t in X)


def test_incompatibility_and_clique():
    X = [Trace((L1, L1, L1), (0, 1, 2))]
    tree = PrefixTree(X)
    bits = incompatibility(tree, 1e-9)
    clique = greedy_clique(bits)
    assert len(clique) == 3
    assert infer_minimal(X, 0.0).size == 3


# ---------------------------------------------------------------- shift repair


def test_shift_repair_midrange():
    h = single_state(P1).replace_outputs({(0, L1): 0.0}, half_width=1.0)
    z = shift_repair(h, [Trace((L1,), (0.2,)), Trace((L1,), (1.5,))], 1.0)
    assert z.sigma(0, L1).mean == pytest.approx(0.85)


def test_shift_repair_type2():
    h = single_state(P1).replace_outputs({(0, L1): 0.0}, half_width=1.0)
    assert shift_repair(h, [Trace((L1,), (0,)), Trace((L1,), (3,))], 1.0) is None


def test_shift_repair_empty():
    h = single_state(P1).replace_outputs({(0, L1): 0.4}, half_width=1.0)
    assert shift_repair(h, [], 1.0) == h


def test_shift_repair_keeps_unobserved_means():
    h = single_state(P1).replace_outputs({(0, L1): 0.4, (0, L2): 7.0}, half_width=1.0)
    z = shift_repair(h, [Trace((L1,), (1.0,))], 1.0)
    assert z.sigma(0, L2).mean == 7.0
    assert z.delta(0, L1) == h.delta(0, L1)


# ---------------------------------------------------------------- properties


@settings(max_examples=150, deadline=None)
@given(trace_sets, eps_values)
def test_solvers_agree_with_enumeration(X, eps):
    for n in (1, 2):
        want = satisfiable(X, n, eps)
        for backend in BACKENDS:
            m = solve(encode(X, n, eps, PROPS), backend)
            assert (m is not None) == want
            if m is not None:
                assert len(m.states) == n
                assert all(eps_consistent(t, m, eps) for t in X)


@settings(max_examples=60, deadline=None)
@given(trace_sets, eps_values)
def test_minimal_size_matches_enumeration(X, eps):
    want = minimal_size(X, eps, cap=3)
    for backend in BACKENDS:
        res = infer_minimal(X, eps, backend, size_cap=3, propositions=PROPS)
        assert res.size == want if want is not None else not res.ok


@settings(max_examples=150, deadline=None)
@given(trace_sets, eps_values)
def test_shift_repair_iff_structure_fits(X, eps):
    h = single_state(PROPS).replace_outputs({}, half_width=eps)
    z = shift_repair(h, X, eps)
    assert (z is not None) == satisfiable(X, 1, eps)
    if z is not None:
        assert all(eps_consistent(t, z, eps) for t in X)


@settings(max_examples=100, deadline=None)
@given(trace_sets)
def test_zero_eps_outputs_equal_observations(X):
    res = infer_minimal(X, 0.0, size_cap=3, propositions=PROPS)
    if res.ok:
        for t in X:
            states = [res.machine.initial]
            for lab in t.labels:
                states.append(res.machine.delta(states[-1], lab))
            for v, lab, r in zip(states, t.labels, t.rewards):
                assert res.machine.sigma(v, lab).mean == r
