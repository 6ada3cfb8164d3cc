"""Learning stochastic reward machines from noisy traces."""
from .core import (
    EMPTY,
    SRM,
    TOL,
    OutputDist,
    PropositionSet,
    Trace,
    canonical_form,
    eps_consistent,
    equivalent_in_expectation,
)

__version__ = "0.1.0"

__all__ = [
    "EMPTY",
    "SRM",
    "TOL",
    "OutputDist",
    "PropositionSet",
    "Trace",
    "canonical_form",
    "eps_consistent",
    "equivalent_in_expectation",
]
