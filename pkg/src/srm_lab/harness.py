"""Experiment orchestration: configs, per-seed runs, metrics and artifacts."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import SRM
from .driver import ALGORITHMS, LearnerConfig, learn
from .envs import cross_product_optimum, env_from_config
from .formats import machine_to_dict, to_dot
from .infer import Budget, SolverBackend
from .qrm import Exploration

log = logging.getLogger(__name__)

FAILED = ("timeout", "cap_hit", "wall_clock", "solver_error", "error")


@dataclass
class ExperimentConfig:
    algorithm: str
    env: dict
    eps: float
    episodes: int
    seeds: list
    max_steps: int = 400
    size_cap: int = 10
    backend: str = "internal"
    budget: dict = field(default_factory=lambda: {"seconds_per_size": 60.0})
    alpha: float = 0.1
    gamma: float = 0.95
    explore: object = 0.15
    timeout_seconds: float | None = 600.0
    samples_per_cx: int = 20
    max_replay_attempts: int = 200
    store_cap: int | None = None
    threshold: float = 0.95
    window: int = 100
    stop_on_convergence: bool = False
    workers: int = 1
    name: str = ""

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.episodes < 1 or self.window < 1:
            raise ValueError("episodes and window must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def learner_config(self) -> LearnerConfig:
        b = self.budget or {}
        return LearnerConfig(
            eps=self.eps,
            max_steps=self.max_steps,
            size_cap=self.size_cap,
            budget=Budget(
                b.get("seconds_per_size"), b.get("nodes_per_size"), b.get("total_seconds")
            ),
            backend=SolverBackend.parse(self.backend),
            alpha=self.alpha,
            gamma=self.gamma,
            explore=Exploration.from_config(self.explore),
            samples_per_cx=self.samples_per_cx,
            max_replay_attempts=self.max_replay_attempts,
            store_cap=self.store_cap,
        )


# ---------------------------------------------------------------- metrics


def rolling_mean(returns, window: int = 100) -> np.ndarray:
    """Mean of the last ``window`` completed episodes (fewer at the start)."""
    x = np.asarray(returns, dtype=float)
    if len(x) == 0:
        return x
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def episodes_to_threshold(returns, target: float, window: int = 100):
    """Episode count at which a full-window rolling mean first reaches
    ``target``; None if it never does."""
    roll = rolling_mean(returns, window)
    for i in range(window - 1, len(roll)):
        if roll[i] >= target:
            return i + 1
    return None


@dataclass
class MetricSeries:
    returns: list  # per seed
    window: int = 100

    def rolling(self) -> list:
        return [rolling_mean(r, self.window) for r in self.returns]

    def padded(self) -> np.ndarray:
        """Rolling means stacked per seed; runs that stopped early carry
        their last value forward."""
        rolls = self.rolling()
        n = max((len(r) for r in rolls), default=0)
        out = np.full((len(rolls), n), np.nan)
        for i, r in enumerate(rolls):
            if len(r):
                out[i, : len(r)] = r
                out[i, len(r) :] = r[-1]
        return out

    def quantiles(self):
        """``(median, q25, q75)`` across seeds per episode."""
        m = self.padded()
        if m.size == 0:
            return np.array([]), np.array([]), np.array([])
        q25, med, q75 = np.nanpercentile(m, [25, 50, 75], axis=0)
        return med, q25, q75

    def first_median_crossing(self, target: float):
        med = self.quantiles()[0]
        for i in range(self.window - 1, len(med)):
            if med[i] >= target:
                return i + 1
        return None


# ---------------------------------------------------------------- running


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def run_seed(cfg: ExperimentConfig, seed: int, target: float | None = None) -> dict:
    env, truth = env_from_config(cfg.env)
    lcfg = cfg.learner_config()
    stop = None
    if cfg.stop_on_convergence and target is not None:
        def stop(events):
            if len(events) < cfg.window:
                return False
            tail = events[-cfg.window :]
            return math.fsum(e["return"] for e in tail) / cfg.window >= target
    res = learn(cfg.algorithm, env, truth, lcfg, seed, cfg.episodes, cfg.timeout_seconds, stop)
    st = res.state
    return {
        "seed": seed,
        "status": res.status,
        "events": res.events,
        "machine": machine_to_dict(st.hypothesis),
        "dot": to_dot(st.hypothesis),
        "counters": {
            "episodes": st.episodes,
            "counterexamples": len(st.X),
            "type1": st.type1_count,
            "type2": st.type2_count,
            "solver_calls": st.solver_calls,
            "solver_nodes": st.solver_nodes,
            "replay_attempts": st.replay_attempts,
            "replay_exhausted": st.replay_exhausted,
            "revisits": st.revisits,
        },
        "seconds": res.seconds,
        "solver_seconds": st.solver_seconds,
    }


def _run_seed_safe(args):
    cfg, seed, target = args
    try:
        return run_seed(cfg, seed, target)
    except Exception as exc:  # isolate per-seed failures
        log.exception("seed %s failed", seed)
        return {"seed": seed, "status": "error", "error": repr(exc), "events": [],
                "machine": None, "dot": None, "counters": {}, "seconds": 0.0, "solver_seconds": 0.0}


def optimum_for(cfg: ExperimentConfig) -> float:
    env, truth = env_from_config(cfg.env)
    return cross_product_optimum(env, truth, cfg.gamma, cfg.max_steps)[0]


def write_events(events, path) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")


def summarize(cfg: ExperimentConfig, runs: list, optimum: float) -> dict:
    target = cfg.threshold * optimum
    series = MetricSeries([[e["return"] for e in r["events"]] for r in runs], cfg.window)
    per_seed = []
    for r, roll in zip(runs, series.rolling()):
        rets = [e["return"] for e in r["events"]]
        ett = episodes_to_threshold(rets, target, cfg.window)
        c = r["counters"]
        exhausted = c.get("replay_exhausted", 0)
        seen = exhausted + c.get("counterexamples", 0)
        per_seed.append({
            "seed": r["seed"],
            "status": r["status"],
            "episodes": len(rets),
            "episodes_to_threshold": ett,
            "converged": ett is not None,
            "timed_out": r["status"] in FAILED,
            "final_rolling": _jsonable(float(roll[-1])) if len(roll) else None,
            "hypothesis_size": len(r["machine"]["states"]) if r.get("machine") else None,
            "replay_exhaustion_rate": exhausted / seen if seen else 0.0,
            **c,
            **({"error": r["error"]} if "error" in r else {}),
        })
    med, _, _ = series.quantiles()
    etts = [s["episodes_to_threshold"] for s in per_seed]
    reached = sorted(e for e in etts if e is not None)
    # seeds that never reach the threshold count as infinitely slow
    med_ett = None
    if len(reached) * 2 > len(etts):
        ordered = reached + [math.inf] * (len(etts) - len(reached))
        m = float(np.median(ordered))
        med_ett = m if math.isfinite(m) else None
    n = len(per_seed)
    timed_out = sum(s["timed_out"] for s in per_seed)
    median_crossing = series.first_median_crossing(target)
    exhausted = sum(s.get("replay_exhausted", 0) for s in per_seed)
    seen = exhausted + sum(s.get("counterexamples", 0) for s in per_seed)
    return {
        "name": cfg.name,
        "algorithm": cfg.algorithm,
        "env": cfg.env,
        "eps": cfg.eps,
        "episodes": cfg.episodes,
        "seeds": list(cfg.seeds),
        "optimum": optimum,
        "threshold": cfg.threshold,
        "target": target,
        "converged": median_crossing is not None,
        "median_episodes_to_threshold": med_ett,
        "median_curve_crossing": median_crossing,
        "converged_seeds": sum(s["converged"] for s in per_seed),
        "timeout_rate": timed_out / n if n else 0.0,
        "final_median": _jsonable(float(med[-1])) if len(med) else None,
        "replay_exhaustion_rate": exhausted / seen if seen else 0.0,
        "per_seed": per_seed,
    }


def run_experiment(cfg: ExperimentConfig, out: str | os.PathLike | None = None) -> dict:
    """Run every seed and write artifacts under ``out`` (when given).

    Returns the summary mapping.  Per-seed artifacts are
    ``seed-<k>.events.jsonl``, ``seed-<k>.srm.json`` and ``seed-<k>.srm.dot``;
    the experiment-level ones are ``aggregate.csv``, ``summary.json`` and
    ``timings.json`` (wall-clock figures, kept apart from the reproducible
    files).
    """
    optimum = optimum_for(cfg)
    target = cfg.threshold * optimum
    jobs = [(cfg, s, target) for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            runs = list(pool.map(_run_seed_safe, jobs))
    else:
        runs = [_run_seed_safe(j) for j in jobs]
    summary = summarize(cfg, runs, optimum)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "config.json", "w") as fh:
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        for r in runs:
            k = r["seed"]
            write_events(r["events"], out / f"seed-{k}.events.jsonl")
            if r.get("machine"):
                with open(out / f"seed-{k}.srm.json", "w") as fh:
                    json.dump(r["machine"], fh, indent=2)
                (out / f"seed-{k}.srm.dot").write_text(r["dot"])
        series = MetricSeries([[e["return"] for e in r["events"]] for r in runs], cfg.window)
        med, q25, q75 = series.quantiles()
        with open(out / "aggregate.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "median", "q25", "q75"])
            for i in range(len(med)):
                w.writerow([i + 1, repr(float(med[i])), repr(float(q25[i])), repr(float(q75[i]))])
        with open(out / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        with open(out / "timings.json", "w") as fh:
            json.dump(
                {str(r["seed"]): {"seconds": r["seconds"], "solver_seconds": r["solver_seconds"]} for r in runs},
                fh, indent=2,
            )
    return summary


# ---------------------------------------------------------------- evaluation


def evaluate_machine(env, truth: SRM, machine: SRM, gamma: float, horizon: int) -> dict:
    """Act greedily on env x ``machine`` and score the policy under ``truth``.

    Returns the optimum, the policy's expected ``horizon``-step return, and
    their ratio.
    """
    optimum = cross_product_optimum(env, truth, gamma, horizon)[0]
    _, pi = cross_product_optimum(env, machine, gamma, horizon)
    hs = list(machine.states)
    hidx = {v: i for i, v in enumerate(hs)}
    ts = list(truth.states)
    tidx = {v: i for i, v in enumerate(ts)}
    nS, nT, nH = env.n_states, len(ts), len(hs)
    # exact finite-horizon evaluation over env x truth x machine
    E = np.zeros((nS, nT, nH))
    for _ in range(horizon):
        newE = np.zeros_like(E)
        for s in range(nS):
            for ti, vt in enumerate(ts):
                if vt in truth.terminal:
                    continue
                for hi, vh in enumerate(hs):
                    a = pi[s, hi]
                    total = 0.0
                    for p, s2, lab in env.outcomes[s][a]:
                        nt, dist = truth.step(vt, lab)
                        nh, _ = machine.step(vh, lab)
                        total += p * (dist.mean + E[s2, tidx[nt], hidx[nh]])
                    newE[s, ti, hi] = total
        E = newE
    value = float(E[env.initial, tidx[truth.initial], hidx[machine.initial]])
    return {
        "optimum": optimum,
        "policy_return": value,
        "ratio": value / optimum if optimum else None,
    }


# ---------------------------------------------------------------- comparison


def compare(reports: list) -> list:
    """One row per report: episodes-to-threshold, final reward and flags.

    Reports must share environment and eps.
    """
    if not reports:
        return []
    env0, eps0 = reports[0]["env"], reports[0]["eps"]
    for r in reports[1:]:
        if r["env"] != env0 or r["eps"] != eps0:
            raise ValueError("reports use different environments or eps; refusing to compare")
    rows = []
    for r in reports:
        timed_out = r["timeout_rate"] >= 0.5
        rows.append({
            "algorithm": r["algorithm"],
            "name": r.get("name", ""),
            "median_episodes_to_threshold": r["median_episodes_to_threshold"],
            "final_median": r["final_median"],
            "optimum": r["optimum"],
            "timeout_rate": r["timeout_rate"],
            "replay_exhaustion_rate": r.get("replay_exhaustion_rate", 0.0),
            "timed_out": timed_out,
            "stalled": not r["converged"] and not timed_out,
        })
    return rows


def format_table(rows: list) -> str:
    cols = ["algorithm", "median_episodes_to_threshold", "final_median", "timeout_rate",
            "replay_exhaustion_rate", "flags"]
    lines = []
    data = []
    for r in rows:
        flags = [f for f in ("timed_out", "stalled") if r[f]]
        data.append([
            r["algorithm"] + (f" ({r['name']})" if r["name"] else ""),
            "-" if r["median_episodes_to_threshold"] is None else f"{r['median_episodes_to_threshold']:g}",
            "-" if r["final_median"] is None else f"{r['final_median']:.3f}",
            f"{r['timeout_rate']:.2f}",
            f"{r['replay_exhaustion_rate']:.2f}",
            ",".join(flags) or "ok",
        ])
    widths = [max(len(c), *(len(d[i]) for d in data)) for i, c in enumerate(cols)]
    lines.append("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for d in data:
        lines.append("  ".join(x.ljust(w) for x, w in zip(d, widths)))
    return "\n".join(lines)
