"""File formats: machine JSON, Graphviz DOT, and JSON Lines trace files."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from .core import SRM, OutputDist, PropositionSet, Trace, format_label


def machine_to_dict(machine: SRM) -> dict:
    props = machine.propositions
    rows = []
    order = {v: i for i, v in enumerate(machine.states)}
    items = sorted(
        machine.transitions.items(), key=lambda kv: (order[kv[0][0]], props.key(kv[0][1]))
    )
    for (v, lab), (nxt, dist) in items:
        rows.append(
            {
                "from": v,
                "label": sorted(lab, key=props.names.index),
                "to": nxt,
                "mean": dist.mean,
                "half_width": dist.half_width,
            }
        )
    return {
        "propositions": list(props.names),
        "states": list(machine.states),
        "initial": machine.initial,
        "terminal": [v for v in machine.states if v in machine.terminal],
        "transitions": rows,
    }


def machine_from_dict(data: dict) -> SRM:
    props = PropositionSet(data["propositions"])
    trans = {}
    for row in data.get("transitions", []):
        lab = frozenset(row.get("label", []))
        key = (row["from"], lab)
        if key in trans:
            raise ValueError(f"duplicate transition from {row['from']!r} on {sorted(lab)}")
        dist = OutputDist(float(row.get("mean", 0.0)), float(row.get("half_width", 0.0)))
        trans[key] = (row["to"], dist)
    return SRM(props, tuple(data["states"]), data["initial"], trans, frozenset(data.get("terminal", [])))


def load_machine(path) -> SRM:
    return machine_from_dict(json.loads(Path(path).read_text()))


def save_machine(machine: SRM, path) -> None:
    Path(path).write_text(json.dumps(machine_to_dict(machine), indent=2) + "\n")


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def to_dot(machine: SRM, name: str = "srm") -> str:
    """One edge per explicit transition, labelled ``φ / U[lo, hi]``."""
    props = machine.propositions
    lines = [f"digraph {name} {{", "  rankdir=LR;"]
    for v in machine.states:
        shape = "doublecircle" if v in machine.terminal else "circle"
        lines.append(f'  "{v}" [shape={shape}];')
    lines.append('  "__start" [shape=point];')
    lines.append(f'  "__start" -> "{machine.initial}";')
    order = {v: i for i, v in enumerate(machine.states)}
    items = sorted(
        machine.transitions.items(), key=lambda kv: (order[kv[0][0]], props.key(kv[0][1]))
    )
    for (v, lab), (nxt, d) in items:
        text = f"{format_label(lab, props)} / U[{_fmt(d.low)}, {_fmt(d.high)}]"
        lines.append(f'  "{v}" -> "{nxt}" [label="{text}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def trace_to_dict(trace: Trace, props: PropositionSet | None = None) -> dict:
    if props is None:
        labels = [sorted(lab) for lab in trace.labels]
    else:
        labels = [sorted(lab, key=props.names.index) for lab in trace.labels]
    return {"labels": labels, "rewards": list(trace.rewards)}


def trace_from_dict(data: dict) -> Trace:
    return Trace(tuple(frozenset(l) for l in data["labels"]), tuple(data["rewards"]))


def write_traces(traces: Iterable[Trace], path, props: PropositionSet | None = None) -> None:
    with open(path, "w") as fh:
        for t in traces:
            fh.write(json.dumps(trace_to_dict(t, props)) + "\n")


def read_traces(path) -> list:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(trace_from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad trace record: {exc}") from exc
    return out
