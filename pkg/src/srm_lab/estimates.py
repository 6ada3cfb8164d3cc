"""Output correction from the full trace store.

Each transition of the hypothesis collects the rewards it receives on the
traces that are eps-consistent with it.  The midrange of a bucket keeps the
machine consistent with every contributing trace; the arithmetic mean is the
unbiased choice when the noise is asymmetric.
"""
from __future__ import annotations

import math

from .core import SRM, eps_consistent


def reward_buckets(hypothesis: SRM, store, eps: float) -> dict:
    """``{(state, label): [rewards]}`` over the consistent traces of ``store``."""
    buckets = {}
    trans = hypothesis.transitions
    for t in store:
        if not eps_consistent(t, hypothesis, eps):
            continue
        v = hypothesis.initial
        for lab, r in zip(t.labels, t.rewards):
            buckets.setdefault((v, lab), []).append(r)
            hit = trans.get((v, lab))
            if hit is not None:
                v = hit[0]
    return buckets


def midrange(values) -> float:
    return (max(values) + min(values)) / 2


def estimates(hypothesis: SRM, store, eps: float) -> SRM:
    buckets = reward_buckets(hypothesis, store, eps)
    if not buckets:
        return hypothesis
    return hypothesis.replace_outputs({k: midrange(rs) for k, rs in buckets.items()}, half_width=eps)


def estimates_asymmetric(hypothesis: SRM, store, eps: float):
    """``(H, G)``: midrange outputs for consistency checks, arithmetic-mean
    outputs for learning.  Both keep the input's structure."""
    buckets = reward_buckets(hypothesis, store, eps)
    if not buckets:
        return hypothesis, hypothesis
    h = hypothesis.replace_outputs({k: midrange(rs) for k, rs in buckets.items()}, half_width=eps)
    g = hypothesis.replace_outputs(
        {k: math.fsum(rs) / len(rs) for k, rs in buckets.items()}, half_width=eps
    )
    return h, g
