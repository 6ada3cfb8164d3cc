"""Command line entry point: ``srm-lab <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from .core import canonical_form
from .envs import env_from_config
from .formats import load_machine, read_traces, save_machine, to_dot
from .harness import ExperimentConfig, compare, evaluate_machine, format_table, run_experiment
from .infer import Budget, SolverBackend, infer_minimal


def _load_config(path: str) -> ExperimentConfig:
    """A config file path, or the name of a shipped config (``mining-srmi``)."""
    p = Path(path)
    if not p.exists():
        shipped = resources.files("srm_lab") / "configs" / f"{path}.json"
        if shipped.is_file():
            return ExperimentConfig.from_dict(json.loads(shipped.read_text()))
        raise SystemExit(f"no such config: {path}")
    return ExperimentConfig.load(p)


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.seeds:
        cfg.seeds = [int(s) for s in args.seeds.split(",")]
    if args.episodes:
        cfg.episodes = args.episodes
    if args.workers:
        cfg.workers = args.workers
    out = args.out or f"runs/{cfg.name or cfg.algorithm}"
    summary = run_experiment(cfg, out)
    for s in summary["per_seed"]:
        print(
            f"seed {s['seed']}: status={s['status']} episodes={s['episodes']} "
            f"to_threshold={s['episodes_to_threshold']} size={s['hypothesis_size']}"
        )
    print(
        f"optimum={summary['optimum']:.4f} final_median={summary['final_median']} "
        f"converged={summary['converged']} -> {out}"
    )
    return 0


def cmd_infer(args) -> int:
    traces = read_traces(args.traces)
    budget = Budget(args.time_budget, args.node_budget)
    res = infer_minimal(traces, args.eps, SolverBackend.parse(args.backend), args.size_cap, budget)
    if not res.ok:
        print(f"{res.status}: {res.reason} (size {res.size}, {res.nodes} nodes)", file=sys.stderr)
        return 2
    machine = canonical_form(res.machine)
    if args.out:
        save_machine(machine, args.out)
    else:
        from .formats import machine_to_dict

        print(json.dumps(machine_to_dict(machine), indent=2))
    if args.dot:
        Path(args.dot).write_text(to_dot(machine))
    print(f"size {res.size}, {res.nodes} search nodes", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    machine = load_machine(args.machine)
    with open(args.env) as fh:
        env_cfg = json.load(fh)
    env, truth = env_from_config(env_cfg)
    if machine.propositions != env.propositions:
        raise SystemExit("machine and environment use different propositions")
    report = evaluate_machine(env, truth, machine, args.gamma, args.horizon)
    print(json.dumps(report, indent=2))
    return 0


def cmd_export_dot(args) -> int:
    text = to_dot(load_machine(args.machine))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_compare(args) -> int:
    reports = []
    for path in args.reports:
        p = Path(path)
        if p.is_dir():
            p = p / "summary.json"
        reports.append(json.loads(p.read_text()))
    try:
        rows = compare(reports)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(format_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srm-lab", description="Stochastic reward machine learning experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run an experiment config")
    p.add_argument("--config", required=True, help="config JSON path or shipped config name")
    p.add_argument("--out", help="output directory (default runs/<name>)")
    p.add_argument("--seeds", help="comma-separated seeds overriding the config")
    p.add_argument("--episodes", type=int, help="episode cap override")
    p.add_argument("--workers", type=int, help="parallel seed workers")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="infer a minimal machine from a trace file")
    p.add_argument("--traces", required=True, help="JSON Lines trace file")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--size-cap", type=int, default=10)
    p.add_argument("--backend", default="internal", help="internal | sat | smt | smt:<solver path>")
    p.add_argument("--time-budget", type=float, default=60.0, help="seconds per candidate size")
    p.add_argument("--node-budget", type=int, help="search nodes per candidate size")
    p.add_argument("--out", help="write machine JSON here instead of stdout")
    p.add_argument("--dot", help="also write a DOT rendering")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a machine's greedy policy on an environment")
    p.add_argument("--machine", required=True)
    p.add_argument("--env", required=True, help="environment config JSON")
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--horizon", type=int, default=400)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-dot", help="render a machine JSON as Graphviz DOT")
    p.add_argument("--machine", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_dot)

    p = sub.add_parser("compare", help="tabulate experiment summaries")
    p.add_argument("reports", nargs="+", help="summary.json files or run directories")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
