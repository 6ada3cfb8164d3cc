"""Labeled MDPs, the Mining gridworld and the Harvest cycle, with their
ground-truth reward machines."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import EMPTY, SRM, OutputDist, PropositionSet, Trace


class TabularMDP:
    """Finite labeled MDP given by explicit outcome tables.

    ``outcomes[s][a]`` is a list of ``(prob, next_state, label)`` triples.
    States and actions are integer indices; ``action_names`` is for display.
    """

    def __init__(self, propositions, n_states, initial, action_names, outcomes, state_names=None):
        self.propositions = propositions
        self.n_states = n_states
        self.initial = initial
        self.action_names = tuple(action_names)
        self.state_names = tuple(state_names) if state_names else tuple(range(n_states))
        self.outcomes = outcomes
        self._tables = []
        for s in range(n_states):
            row = []
            for a in range(len(self.action_names)):
                outs = outcomes[s][a]
                total = sum(p for p, _, _ in outs)
                if abs(total - 1.0) > 1e-9:
                    raise ValueError(f"outcome probabilities for ({s}, {a}) sum to {total}")
                for _, _, lab in outs:
                    propositions.validate(lab)
                cum = np.cumsum([p for p, _, _ in outs])
                row.append((cum, tuple(o[1] for o in outs), tuple(o[2] for o in outs)))
            self._tables.append(row)

    @property
    def n_actions(self) -> int:
        return len(self.action_names)

    def reset(self) -> int:
        return self.initial

    def step(self, state: int, action: int, rng: np.random.Generator):
        """Sample ``(next_state, label)``."""
        if not 0 <= action < self.n_actions:
            raise ValueError(f"invalid action {action!r}")
        cum, nxt, labs = self._tables[state][action]
        if len(nxt) == 1:
            return nxt[0], labs[0]
        i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        i = min(i, len(nxt) - 1)
        return nxt[i], labs[i]

    def labels(self) -> list:
        """Every label the environment can emit."""
        seen = {lab for row in self.outcomes for outs in row for _, _, lab in outs}
        return self.propositions.sorted_labels(seen)


# ---------------------------------------------------------------- Mining

MINING_PROPS = ("E", "P", "G", "M", "T")

# 6x8 mine; "A" marks the agent's start cell (label ∅).
MINING_GRID = (
    "..T...T.",
    "E.AE.G..",
    "T..TP...",
    "..M...T.",
    "..P.....",
    ".T.....P",
)

UP, RIGHT, DOWN, LEFT = range(4)
_MOVES = {UP: (-1, 0), RIGHT: (0, 1), DOWN: (1, 0), LEFT: (0, -1)}
_PERPENDICULAR = {UP: (LEFT, RIGHT), DOWN: (LEFT, RIGHT), LEFT: (UP, DOWN), RIGHT: (UP, DOWN)}


@dataclass
class MiningConfig:
    grid: tuple = MINING_GRID
    slip_prob: float = 0.0
    noise: dict = field(default_factory=lambda: {"G": 0.1, "P": 0.1})
    gold_mean: float = 1.0
    platinum_mean: float = 1.1

    def __post_init__(self):
        self.grid = tuple(self.grid)
        if not 0 <= self.slip_prob < 1:
            raise ValueError("slip_prob must be in [0, 1)")
        width = len(self.grid[0])
        for row in self.grid:
            if len(row) != width:
                raise ValueError("grid rows must have equal length")
            bad = set(row) - set(".AEPGMT")
            if bad:
                raise ValueError(f"unknown grid cells {sorted(bad)}")
        if sum(row.count("A") for row in self.grid) != 1:
            raise ValueError("grid needs exactly one start cell 'A'")


class MiningEnv(TabularMDP):
    def __init__(self, cfg: MiningConfig | None = None):
        cfg = cfg or MiningConfig()
        self.config = cfg
        props = PropositionSet(MINING_PROPS)
        rows, cols = len(cfg.grid), len(cfg.grid[0])
        self.shape = (rows, cols)
        cell_label = []
        start = 0
        for r, row in enumerate(cfg.grid):
            for c, ch in enumerate(row):
                cell_label.append(EMPTY if ch in ".A" else frozenset(ch))
                if ch == "A":
                    start = r * cols + c
        self.cell_labels = cell_label

        def move(s, direction):
            r, c = divmod(s, cols)
            dr, dc = _MOVES[direction]
            nr, nc = r + dr, c + dc
            if 0 <= nr < rows and 0 <= nc < cols:
                return nr * cols + nc
            return s

        outcomes = []
        for s in range(rows * cols):
            row = []
            for a in range(4):
                probs = {move(s, a): 1.0 - cfg.slip_prob}
                if cfg.slip_prob > 0:
                    for side in _PERPENDICULAR[a]:
                        t = move(s, side)
                        probs[t] = probs.get(t, 0.0) + cfg.slip_prob / 2
                row.append([(p, t, cell_label[t]) for t, p in probs.items() if p > 0])
            outcomes.append(row)
        names = [divmod(s, cols) for s in range(rows * cols)]
        super().__init__(props, rows * cols, start, ("up", "right", "down", "left"), outcomes, names)

    def cell(self, r: int, c: int) -> int:
        return r * self.shape[1] + c


def mining_ground_truth(cfg: MiningConfig | None = None, deterministic: bool = False) -> SRM:
    """Equipment, then gold or platinum, then the market; traps end the episode.

    States: v0 start, v1 equipped, v2 platinum, v3 gold, vT terminal.
    """
    cfg = cfg or MiningConfig()
    props = PropositionSet(MINING_PROPS)
    wg = 0.0 if deterministic else float(cfg.noise.get("G", 0.0))
    wp = 0.0 if deterministic else float(cfg.noise.get("P", 0.0))
    L = props.label
    z = OutputDist(0.0)
    trans = {
        ("v0", L("E")): ("v1", z),
        ("v1", L("P")): ("v2", z),
        ("v1", L("G")): ("v3", z),
        ("v2", L("M")): ("vT", OutputDist(cfg.platinum_mean, wp)),
        ("v3", L("M")): ("vT", OutputDist(cfg.gold_mean, wg)),
    }
    for v in ("v0", "v1", "v2", "v3", "vT"):
        trans[(v, L("T"))] = ("vT", z)
    return SRM(props, ("v0", "v1", "v2", "v3", "vT"), "v0", trans, frozenset({"vT"}))


# ---------------------------------------------------------------- Harvest

QUALITIES = ("G", "M", "B")
HARVEST_ACTIONS = ("P", "W", "H", "S")


def harvest_prop(s: str, a: str, s2: str) -> str:
    return f"{s}{a}{s2}"


@dataclass
class HarvestConfig:
    quality_dynamics: dict = field(
        default_factory=lambda: {
            "G": {"G": 0.6, "M": 0.2, "B": 0.2},
            "M": {"G": 0.2, "M": 0.6, "B": 0.2},
            "B": {"G": 0.2, "M": 0.2, "B": 0.6},
        }
    )
    harvest_means: dict = field(default_factory=lambda: {"G": 20.0, "M": 10.0, "B": 2.0})
    noise_half_width: float = 1.0
    penalty: float = -3.0
    initial_quality: str = "G"

    def __post_init__(self):
        for q in QUALITIES:
            row = self.quality_dynamics[q]
            if abs(sum(row.values()) - 1.0) > 1e-9:
                raise ValueError(f"quality_dynamics row {q!r} does not sum to 1")
        if self.initial_quality not in QUALITIES:
            raise ValueError(f"unknown quality {self.initial_quality!r}")


class HarvestEnv(TabularMDP):
    """Crop quality evolves on its own; the label is the transition itself."""

    def __init__(self, cfg: HarvestConfig | None = None):
        cfg = cfg or HarvestConfig()
        self.config = cfg
        props = PropositionSet(
            harvest_prop(s, a, t) for s in QUALITIES for a in HARVEST_ACTIONS for t in QUALITIES
        )
        outcomes = []
        for s in QUALITIES:
            row = []
            for a in HARVEST_ACTIONS:
                dyn = cfg.quality_dynamics[s]
                row.append(
                    [
                        (dyn[t], QUALITIES.index(t), frozenset({harvest_prop(s, a, t)}))
                        for t in QUALITIES
                        if dyn.get(t, 0) > 0
                    ]
                )
            outcomes.append(row)
        super().__init__(
            props, 3, QUALITIES.index(cfg.initial_quality), HARVEST_ACTIONS, outcomes, QUALITIES
        )


def harvest_ground_truth(cfg: HarvestConfig | None = None, deterministic: bool = False) -> SRM:
    """Plant, water, harvest, sell.  Harvesting pays according to the crop
    quality when the harvest action is taken; any out-of-order action pays
    ``penalty`` and restarts the cycle."""
    cfg = cfg or HarvestConfig()
    env_props = PropositionSet(
        harvest_prop(s, a, t) for s in QUALITIES for a in HARVEST_ACTIONS for t in QUALITIES
    )
    w = 0.0 if deterministic else cfg.noise_half_width
    pen = OutputDist(cfg.penalty)
    z = OutputDist(0.0)
    states = ("ready", "planted", "watered", "harvested")
    step_ok = {"ready": ("P", "planted"), "planted": ("W", "watered"), "harvested": ("S", "ready")}
    trans = {}
    for s in QUALITIES:
        for a in HARVEST_ACTIONS:
            for t in QUALITIES:
                lab = frozenset({harvest_prop(s, a, t)})
                for v, (good, nxt) in step_ok.items():
                    trans[(v, lab)] = (nxt, z) if a == good else ("ready", pen)
                if a == "H":
                    trans[("watered", lab)] = ("harvested", OutputDist(cfg.harvest_means[s], w))
                else:
                    trans[("watered", lab)] = ("ready", pen)
    return SRM(env_props, states, "ready", trans, frozenset())


# ---------------------------------------------------------------- episodes


@dataclass
class EpisodeConfig:
    max_steps: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")


def episode_bound(mdp_size: int, machine_size: int) -> int:
    """Episode length sufficient to expose every structural counterexample:
    2^(|M|+1) * (|T|+1) - 1."""
    return 2 ** (mdp_size + 1) * (machine_size + 1) - 1


def scripted(actions: Sequence[int]) -> Callable:
    """Policy that plays a fixed action list, then repeats the last action."""
    actions = list(actions)
    state = {"i": 0}

    def policy(env_state, rng):
        i = min(state["i"], len(actions) - 1)
        state["i"] += 1
        return actions[i]

    return policy


def rollout(env: TabularMDP, machine: SRM, policy, max_steps: int, rng: np.random.Generator):
    """Play one episode; returns ``(trace, actions)``.

    The machine produces the rewards and ends the episode when it enters a
    terminal state.  ``policy`` is a callable ``(env_state, rng) -> action``
    or a sequence of actions (the episode then also stops when it runs out).
    """
    if not callable(policy):
        seq = list(policy)
        max_steps = min(max_steps, len(seq))
        policy_fn = lambda s, r, _it=iter(seq): next(_it)
    else:
        policy_fn = policy
    s = env.reset()
    v = machine.initial
    labels, rewards, actions = [], [], []
    for _ in range(max_steps):
        a = policy_fn(s, rng)
        s, lab = env.step(s, a, rng)
        v, dist = machine.step(v, lab)
        labels.append(lab)
        rewards.append(dist.sample(rng))
        actions.append(a)
        if v in machine.terminal:
            break
    return Trace(tuple(labels), tuple(rewards)), actions


def run_episode(env: TabularMDP, machine: SRM, policy, cfg: EpisodeConfig, rng=None) -> Trace:
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return rollout(env, machine, policy, cfg.max_steps, rng)[0]


def replay(env: TabularMDP, machine: SRM, actions: Sequence[int], expected_labels, rng):
    """Re-execute a recorded action sequence with fresh randomness.

    Returns ``(trace, matched)`` where ``matched`` says whether the new label
    sequence equals ``expected_labels``.
    """
    trace, _ = rollout(env, machine, list(actions), len(actions), rng)
    return trace, tuple(trace.labels) == tuple(expected_labels)


# ---------------------------------------------------------------- oracle


def _cross_product(env: TabularMDP, truth: SRM):
    vs = list(truth.states)
    vidx = {v: i for i, v in enumerate(vs)}
    nv = len(vs)
    nx = env.n_states * nv
    na = env.n_actions
    P = np.zeros((nx, na, nx))
    R = np.zeros((nx, na))
    term = np.zeros(nx, dtype=bool)
    for s in range(env.n_states):
        for vi, v in enumerate(vs):
            x = s * nv + vi
            if v in truth.terminal:
                term[x] = True
                continue
            for a in range(na):
                for p, t, lab in env.outcomes[s][a]:
                    nxt, dist = truth.step(v, lab)
                    y = t * nv + vidx[nxt]
                    P[x, a, y] += p
                    R[x, a] += p * dist.mean
    return P, R, term, vidx


def cross_product_optimum(env: TabularMDP, truth: SRM, gamma: float, horizon: int, tol=1e-10):
    """Value iteration on env x truth.

    Returns ``(expected_return, policy)``: the expected undiscounted
    ``horizon``-step return of the discounted-optimal greedy policy, and that
    policy as an array indexed by ``[env_state, truth_state_index]``.
    """
    P, R, term, vidx = _cross_product(env, truth)
    nx, na, _ = P.shape
    live = ~term
    V = np.zeros(nx)
    for _ in range(100000):
        Q = R + gamma * P @ (V * live)
        newV = np.where(term, 0.0, Q.max(axis=1))
        if np.max(np.abs(newV - V)) < tol:
            V = newV
            break
        V = newV
    Q = R + gamma * P @ (V * live)
    pi = Q.argmax(axis=1)
    Ppi = P[np.arange(nx), pi]
    Rpi = R[np.arange(nx), pi]
    E = np.zeros(nx)
    for _ in range(horizon):
        E = np.where(term, 0.0, Rpi + Ppi @ (E * live))
    x0 = env.initial * len(vidx) + vidx[truth.initial]
    return float(E[x0]), pi.reshape(env.n_states, len(vidx))


# ---------------------------------------------------------------- configs


def env_from_config(data: dict):
    """Build ``(env, ground_truth)`` from an environment config mapping."""
    from .formats import load_machine

    kind = data.get("kind", "mining")
    deterministic = bool(data.get("deterministic", False))
    if kind == "mining":
        cfg = MiningConfig(
            grid=tuple(data.get("grid", MINING_GRID)),
            slip_prob=float(data.get("slip_prob", 0.0)),
            noise=dict(data.get("noise", {"G": 0.1, "P": 0.1})),
        )
        env, truth = MiningEnv(cfg), mining_ground_truth(cfg, deterministic)
    elif kind == "harvest":
        base = HarvestConfig()
        cfg = HarvestConfig(
            quality_dynamics=data.get("quality_dynamics", base.quality_dynamics),
            harvest_means=data.get("harvest_means", base.harvest_means),
            noise_half_width=float(data.get("noise_half_width", base.noise_half_width)),
            penalty=float(data.get("penalty", base.penalty)),
            initial_quality=data.get("initial_quality", base.initial_quality),
        )
        env, truth = HarvestEnv(cfg), harvest_ground_truth(cfg, deterministic)
    else:
        raise ValueError(f"unknown environment kind {kind!r}")
    if data.get("ground_truth"):
        truth = load_machine(data["ground_truth"])
        if truth.propositions != env.propositions:
            raise ValueError("ground-truth machine uses a different proposition set")
    return env, truth
