import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srm_lab import SRM, OutputDist, PropositionSet, Trace, eps_consistent
from srm_lab.estimates import estimates, estimates_asymmetric, midrange, reward_buckets

PROPS = PropositionSet(["a", "b"])
A, B = PROPS.label("a"), PROPS.label("b")


def one_state(mean=0.0, eps=1.0):
    return SRM(PROPS, (0,), 0, {(0, A): (0, OutputDist(mean, eps))})


def store(*rewards):
    return [Trace((A,), (r,)) for r in rewards]


def test_midrange_bucket():
    h = estimates(one_state(1.0, 0.1), store(0.9, 1.0, 1.1), 0.1)
    assert h.sigma(0, A).mean == pytest.approx(1.0)
    assert h.sigma(0, A).half_width == 0.1


def test_single_sample_bucket():
    assert estimates(one_state(0.0), store(0.7), 1.0).sigma(0, A).mean == 0.7


def test_empty_store_keeps_hypothesis():
    h = one_state(0.3)
    assert estimates(h, [], 1.0) is h
    assert estimates_asymmetric(h, [], 1.0) == (h, h)


def test_inconsistent_traces_skipped():
    h = one_state(0.0, 1.0)
    assert reward_buckets(h, store(0.5, 5.0), 1.0) == {(0, A): [0.5]}


def test_asymmetric_pair():
    h, g = estimates_asymmetric(one_state(1.5, 1.5), store(0, 0, 3), 1.5)
    assert h.sigma(0, A).mean == 1.5
    assert g.sigma(0, A).mean == 1.0
    h, g = estimates_asymmetric(one_state(0.0, 1.0), store(-1, 1), 1.0)
    assert h.sigma(0, A).mean == g.sigma(0, A).mean == 0.0
    assert h.transitions.keys() == g.transitions.keys()


def test_arithmetic_mean_matches_direct_sum():
    rng = np.random.default_rng(3)
    xs = list(rng.uniform(-1, 1, 500))
    _, g = estimates_asymmetric(one_state(0.0, 1.0), store(*xs), 1.0)
    assert g.sigma(0, A).mean == math.fsum(xs) / len(xs)


def test_midrange_concentrates():
    rng = np.random.default_rng(0)
    xs = rng.uniform(0.9, 1.1, 10_000)
    assert abs(midrange(xs) - 1.0) <= 0.02


# ---------------------------------------------------------------- properties

small = st.integers(-8, 8).map(lambda k: k / 4)


@st.composite
def hyp_and_store(draw):
    n = draw(st.integers(1, 3))
    eps = draw(st.sampled_from([0.25, 0.5, 1.0]))
    trans = {(v, lab): (draw(st.integers(0, n - 1)), OutputDist(draw(small), eps))
             for v in range(n) for lab in (A, B)}
    h = SRM(PROPS, tuple(range(n)), 0, trans)
    traces = draw(st.lists(
        st.lists(st.tuples(st.sampled_from([A, B]), small), max_size=5).map(
            lambda xs: Trace(tuple(l for l, _ in xs), tuple(r for _, r in xs))),
        max_size=6))
    return h, traces, eps


@settings(max_examples=200, deadline=None)
@given(hyp_and_store())
def test_consistency_preserved(case):
    h, traces, eps = case
    new = estimates(h, traces, eps)
    assert new.transitions.keys() == h.transitions.keys()
    for t in traces:
        if eps_consistent(t, h, eps):
            assert eps_consistent(t, new, eps)
