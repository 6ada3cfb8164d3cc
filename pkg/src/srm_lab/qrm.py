"""Tabular Q-learning over the product of an environment and a hypothesis
machine, with counterfactual updates for every machine state."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import SRM, Trace, canonical_order


@dataclass
class Exploration:
    """Epsilon-greedy schedule: constant, or linear from ``start`` to ``end``
    over ``decay_episodes`` episodes."""

    start: float = 0.15
    end: float | None = None
    decay_episodes: int = 0

    def at(self, episode: int) -> float:
        if self.end is None or self.decay_episodes <= 0:
            return self.start
        frac = min(1.0, episode / self.decay_episodes)
        return self.start + (self.end - self.start) * frac

    @classmethod
    def from_config(cls, data) -> "Exploration":
        if isinstance(data, (int, float)):
            return cls(float(data))
        return cls(float(data.get("start", 0.15)), data.get("end"), int(data.get("decay_episodes", 0)))


class CompiledMachine:
    """Per-label successor and mean vectors over the machine's states.

    Rows follow :func:`canonical_order`, so machines that differ only in
    state naming compile to the same arrays.
    """

    def __init__(self, machine: SRM):
        reach, rest = canonical_order(machine)
        self.machine = machine
        self.order = reach + rest
        self.index = {v: i for i, v in enumerate(self.order)}
        self.n = len(self.order)
        self._identity = np.arange(self.n)
        self._zeros = np.zeros(self.n)
        self._cache = {}

    def vectors(self, label):
        hit = self._cache.get(label)
        if hit is None:
            self.machine.check_label(label)
            nxt = np.empty(self.n, dtype=np.intp)
            mean = np.empty(self.n)
            explicit = False
            for i, v in enumerate(self.order):
                t = self.machine.transitions.get((v, label))
                if t is None:
                    nxt[i], mean[i] = i, 0.0
                else:
                    explicit = True
                    nxt[i], mean[i] = self.index[t[0]], t[1].mean
            hit = (nxt, mean) if explicit else (self._identity, self._zeros)
            self._cache[label] = hit
        return hit

    def next_index(self, i: int, label) -> int:
        return int(self.vectors(label)[0][i])


class QTable:
    """Q^v(s, a) for every machine state v, stored as ``values[v, s, a]``."""

    def __init__(self, n_machine_states, n_env_states, n_actions, alpha=0.1, gamma=0.95, explore=None):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 0 <= gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        self.values = np.zeros((n_machine_states, n_env_states, n_actions))
        self.alpha = alpha
        self.gamma = gamma
        self.explore = explore if explore is not None else Exploration()

    def reset(self, n_machine_states: int | None = None) -> None:
        shape = self.values.shape
        if n_machine_states is not None:
            shape = (n_machine_states,) + shape[1:]
        self.values = np.zeros(shape)

    def snapshot(self) -> bytes:
        return self.values.tobytes()

    def to_json(self) -> str:
        """Debug dump; not a stable format."""
        return json.dumps(
            {"alpha": self.alpha, "gamma": self.gamma, "values": self.values.tolist()}
        )


def qrm_update(q: QTable, hypothesis, s: int, a: int, s2: int, label, reward_terminal: bool = False):
    """One counterfactual update per machine state.

    For every state v, with v' = delta(v, label) and r the mean of
    sigma(v, label): Q^v(s,a) <- (1-alpha) Q^v(s,a) + alpha (r + gamma max Q^v'(s', .)).
    ``reward_terminal`` drops the bootstrap term (the episode ended).
    """
    if not isinstance(hypothesis, CompiledMachine):
        hypothesis = CompiledMachine(hypothesis)
    nxt, r = hypothesis.vectors(label)
    vals = q.values
    if reward_terminal:
        target = r
    else:
        target = r + q.gamma * vals[nxt, s2].max(axis=1)
    vals[:, s, a] += q.alpha * (target - vals[:, s, a])
    return q


def greedy_action(row: np.ndarray, rng: np.random.Generator) -> int:
    best = np.flatnonzero(row == row.max())
    if len(best) == 1:
        return int(best[0])
    return int(best[rng.integers(len(best))])


def qrm_episode(env, truth: SRM, hypothesis, q: QTable, max_steps: int, rng, episode: int = 0):
    """Run one episode; returns ``(trace, actions, q)``.

    Rewards are sampled from ``truth`` (which also decides termination);
    the hypothesis means drive the Q updates.
    """
    comp = hypothesis if isinstance(hypothesis, CompiledMachine) else CompiledMachine(hypothesis)
    eps = q.explore.at(episode)
    s = env.reset()
    vh = comp.index[comp.machine.initial]
    vt = truth.initial
    n_actions = env.n_actions
    labels, rewards, actions = [], [], []
    for _ in range(max_steps):
        if rng.random() < eps:
            a = int(rng.integers(n_actions))
        else:
            a = greedy_action(q.values[vh, s], rng)
        s2, lab = env.step(s, a, rng)
        vt, dist = truth.step(vt, lab)
        r = dist.sample(rng)
        done = vt in truth.terminal
        qrm_update(q, comp, s, a, s2, lab, reward_terminal=done)
        labels.append(lab)
        rewards.append(r)
        actions.append(a)
        vh = comp.next_index(vh, lab)
        s = s2
        if done:
            break
    return Trace(tuple(labels), tuple(rewards)), actions, q
