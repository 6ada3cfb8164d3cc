"""Learning loops that interleave QRM episodes with hypothesis refinement."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import SRM, OutputDist, Trace, canonical_form, delta_table, eps_consistent, single_state
from .envs import replay
from .estimates import estimates, estimates_asymmetric
from .infer import Budget, SolverBackend, SolverError, infer_minimal, shift_repair
from .qrm import CompiledMachine, Exploration, QTable, qrm_episode

log = logging.getLogger(__name__)

ALGORITHMS = ("srmi", "srmi-asym", "baseline", "jirp")


@dataclass
class LearnerConfig:
    eps: float = 0.1
    max_steps: int = 400
    size_cap: int = 10
    budget: Budget = field(default_factory=Budget)
    backend: SolverBackend = field(default_factory=SolverBackend)
    alpha: float = 0.1
    gamma: float = 0.95
    explore: Exploration = field(default_factory=Exploration)
    samples_per_cx: int = 20
    max_replay_attempts: int = 200
    store_cap: int | None = None


@dataclass
class LearnerState:
    hypothesis: SRM
    q: QTable
    aux: SRM | None = None
    X: list = field(default_factory=list)
    A: list = field(default_factory=list)
    episodes: int = 0
    type1_count: int = 0
    type2_count: int = 0
    solver_calls: int = 0
    solver_nodes: int = 0
    solver_seconds: float = 0.0
    status: str = "running"
    revisits: int = 0
    replay_attempts: int = 0
    replay_exhausted: int = 0
    processed: list = field(default_factory=list)
    history: list = field(default_factory=list)
    last_event: dict | None = None
    # every smaller size was refuted for a subset of X
    size_floor: int = 1
    _compiled: CompiledMachine | None = None
    _in_x: set = field(default_factory=set)

    @property
    def learning_machine(self) -> SRM:
        return self.aux if self.aux is not None else self.hypothesis

    @property
    def compiled(self) -> CompiledMachine:
        if self._compiled is None or self._compiled.machine is not self.learning_machine:
            self._compiled = CompiledMachine(self.learning_machine)
        return self._compiled

    @property
    def failed(self) -> bool:
        return self.status not in ("running", "completed")


def initial_state(env, cfg: LearnerConfig, asymmetric: bool = False) -> LearnerState:
    h = single_state(env.propositions)
    h = SRM(h.propositions, h.states, h.initial, {}, frozenset())
    q = QTable(1, env.n_states, env.n_actions, cfg.alpha, cfg.gamma, cfg.explore)
    state = LearnerState(hypothesis=h, q=q, aux=h if asymmetric else None)
    state.history.append(delta_table(h))
    return state


def _store(state: LearnerState, trace: Trace, cfg: LearnerConfig, rng) -> None:
    state.A.append(trace)
    if cfg.store_cap is not None and len(state.A) > cfg.store_cap:
        # reservoir-style eviction among traces that are not counterexamples
        for _ in range(len(state.A)):
            i = int(rng.integers(len(state.A) - 1))
            if id(state.A[i]) not in state._in_x:
                state.A.pop(i)
                break


def _install(state: LearnerState, hypothesis: SRM, aux: SRM | None = None) -> None:
    state.hypothesis = hypothesis
    if state.aux is not None or aux is not None:
        state.aux = aux if aux is not None else hypothesis
    state.q.reset(len(state.learning_machine.states))
    state._compiled = None
    table = delta_table(canonical_form(hypothesis))
    if table != state.history[-1]:
        if table in state.history[:-1]:
            state.revisits += 1
            log.warning("hypothesis structure revisited after %d episodes", state.episodes)
        state.history.append(table)


def _episode(state, env, truth, cfg, rng):
    trace, actions, _ = qrm_episode(
        env, truth, state.compiled, state.q, cfg.max_steps, rng, episode=state.episodes
    )
    event = {
        "episode": state.episodes,
        "return": math.fsum(trace.rewards),
        "steps": len(trace),
        "counterexample": None,
    }
    state.episodes += 1
    return trace, actions, event


def _infer(state, traces, eps, cfg, event, monotone=True):
    state.solver_calls += 1
    start = state.size_floor if monotone else 1
    hint = {key: t[0] for key, t in state.hypothesis.transitions.items()}
    try:
        res = infer_minimal(
            traces, eps, cfg.backend, cfg.size_cap, cfg.budget, state.hypothesis.propositions,
            start_size=start, hint=hint,
        )
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        state.status = "solver_error"
        return None
    state.solver_nodes += res.nodes
    state.solver_seconds += res.seconds
    event["solver_nodes"] = res.nodes
    if res.size is not None:
        state.size_floor = max(state.size_floor, res.size)
    if not res.ok:
        state.status = res.status
        log.warning("inference stopped (%s: %s) at episode %d", res.status, res.reason, state.episodes)
        return None
    return canonical_form(res.machine)


def srmi_step(state: LearnerState, env, truth: SRM, cfg: LearnerConfig, rng, eps: float | None = None):
    """One episode of SRMI.  ``eps`` overrides ``cfg.eps`` (JIRP mode uses 0).

    When ``state.aux`` is set the episode explores with it and refinement
    uses the asymmetric estimator pair.
    """
    eps = cfg.eps if eps is None else eps
    asym = state.aux is not None
    trace, _, event = _episode(state, env, truth, cfg, rng)
    _store(state, trace, cfg, rng)
    state.last_event = event
    if eps_consistent(trace, state.hypothesis, eps):
        return state
    state.X.append(trace)
    state._in_x.add(id(trace))
    repaired = shift_repair(state.hypothesis, state.X, eps)
    if repaired is not None:
        state.type1_count += 1
        event["counterexample"] = "type1"
        new = repaired
    else:
        state.type2_count += 1
        event["counterexample"] = "type2"
        new = _infer(state, state.X, eps, cfg, event)
        if new is None:
            return state
    if asym:
        h, g = estimates_asymmetric(new, state.A, eps)
    else:
        h, g = estimates(new, state.A, eps), None
    for t in state.X:
        if not eps_consistent(t, h, eps):
            raise RuntimeError("refined hypothesis is inconsistent with a counterexample")
    _install(state, h, g)
    return state


def srmi_asymmetric_step(state, env, truth, cfg, rng):
    if state.aux is None:
        state.aux = state.hypothesis
    return srmi_step(state, env, truth, cfg, rng)


def jirp_step(state, env, truth, cfg, rng):
    """Exact-consistency learning: SRMI with a dispersion bound of 0."""
    return srmi_step(state, env, truth, cfg, rng, eps=0.0)


def aggregate_estimates(traces, eps: float) -> list:
    """Pool reward estimates that lie within 2*eps of each other.

    Values are swept in ascending order; a group starts at its smallest value
    and takes every value up to 2*eps above it.  Each value is replaced by
    its group's midrange.
    """
    values = sorted({r for t in traces for r in t.rewards})
    rep = {}
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[j + 1] - values[i] <= 2 * eps:
            j += 1
        mid = (values[i] + values[j]) / 2
        for v in values[i : j + 1]:
            rep[v] = mid
        i = j + 1
    return [Trace(t.labels, tuple(rep[r] for r in t.rewards)) for t in traces]


def baseline_step(state: LearnerState, env, truth: SRM, cfg: LearnerConfig, rng):
    """One episode of the replay baseline."""
    eps = cfg.eps
    trace, actions, event = _episode(state, env, truth, cfg, rng)
    _store(state, trace, cfg, rng)
    state.last_event = event
    if eps_consistent(trace, state.hypothesis, eps):
        return state
    samples = []
    attempts = 0
    while len(samples) < cfg.samples_per_cx and attempts < cfg.max_replay_attempts:
        attempts += 1
        rt, matched = replay(env, truth, actions, trace.labels, rng)
        if matched:
            samples.append(rt)
    state.replay_attempts += attempts
    event["replay_attempts"] = attempts
    if len(samples) < cfg.samples_per_cx:
        state.replay_exhausted += 1
        event["counterexample"] = "dropped"
        log.warning(
            "replay exhausted after %d attempts (%d/%d samples); counterexample dropped",
            attempts, len(samples), cfg.samples_per_cx,
        )
        return state
    state.X.append(trace)
    state._in_x.add(id(trace))
    state.type2_count += 1
    event["counterexample"] = "type2"
    pool = [trace] + samples
    means = tuple(math.fsum(t.rewards[i] for t in pool) / len(pool) for i in range(len(trace)))
    state.processed.append(Trace(trace.labels, means))
    # re-aggregation can move values, so earlier refutations do not carry over
    new = _infer(state, aggregate_estimates(state.processed, eps), 0.0, cfg, event, monotone=False)
    if new is None:
        return state
    widened = new.replace_outputs({}, half_width=eps)
    _install(state, widened)
    return state


STEPS = {
    "srmi": srmi_step,
    "srmi-asym": srmi_asymmetric_step,
    "baseline": baseline_step,
    "jirp": jirp_step,
}


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(episode,)))


@dataclass
class LearnResult:
    algorithm: str
    seed: int
    events: list
    state: LearnerState
    status: str
    seconds: float


def learn(algorithm: str, env, truth: SRM, cfg: LearnerConfig, seed: int, episodes: int,
          wall_clock: float | None = None, stop=None) -> LearnResult:
    """Run ``episodes`` episodes (fewer on failure, timeout, or when
    ``stop(events)`` returns true)."""
    if algorithm not in STEPS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    step = STEPS[algorithm]
    state = initial_state(env, cfg, asymmetric=algorithm == "srmi-asym")
    events = []
    t0 = time.monotonic()
    for i in range(episodes):
        step(state, env, truth, cfg, episode_rng(seed, i))
        ev = dict(state.last_event)
        ev["hypothesis_size"] = len(state.hypothesis.states)
        ev.setdefault("solver_nodes", 0)
        ev["status"] = state.status
        events.append(ev)
        if state.failed:
            break
        if stop is not None and stop(events):
            state.status = "converged"
            events[-1]["status"] = state.status
            break
        if wall_clock is not None and time.monotonic() - t0 > wall_clock:
            state.status = "wall_clock"
            events[-1]["status"] = state.status
            break
    if state.status == "running":
        state.status = "completed"
    return LearnResult(algorithm, seed, events, state, state.status, time.monotonic() - t0)
