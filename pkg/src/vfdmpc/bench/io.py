"""YAML configuration files and CSV output."""

from __future__ import annotations

import csv
from dataclasses import fields

import numpy as np
import yaml

from ..graph import CouplingGraph
from ..model import ConstraintTerm, CoupledConstraint, Scenario, SubsystemModel
from .platoon import PlatoonConfig, reference_input, reference_state

CONTROLLER_DEFAULTS = {
    "horizon": 10, "alpha": 0.1, "delta": 0.5, "gamma": None, "q_max": 5, "d_min": None,
    "w": None, "mode": "budget_conserving", "weight_scheme": "metropolis",
}
SWEEP_DEFAULTS = {"horizons": [5, 8, 10], "alphas": [0.1, 0.3, 0.5, 0.7]}


class BenchIOError(RuntimeError):
    pass


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    return f"{float(v):.10g}"


def default_config():
    return {"platoon": PlatoonConfig().to_dict(), "controller": dict(CONTROLLER_DEFAULTS),
            "sweep": dict(SWEEP_DEFAULTS)}


def load_config(path):
    """Read a YAML config; missing sections and keys take their defaults."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise BenchIOError(f"cannot read config {path}: {exc}") from exc
    cfg = default_config()
    for section in cfg:
        extra = raw.get(section) or {}
        unknown = set(extra) - set(cfg[section])
        if unknown:
            raise BenchIOError(f"unknown keys in [{section}]: {sorted(unknown)}")
        cfg[section].update(extra)
    unknown = set(raw) - set(cfg)
    if unknown:
        raise BenchIOError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def save_config(cfg, path):
    try:
        with open(path, "w") as fh:
            yaml.safe_dump(cfg, fh, sort_keys=False)
    except OSError as exc:
        raise BenchIOError(f"cannot write config {path}: {exc}") from exc


def platoon_config(cfg) -> PlatoonConfig:
    names = {f.name for f in fields(PlatoonConfig)}
    return PlatoonConfig(**{k: v for k, v in cfg["platoon"].items() if k in names})


# generic scenarios ---------------------------------------------------------

def _arr(a):
    return np.asarray(a, dtype=float).tolist()


def scenario_to_dict(sc: Scenario):
    return {
        "nodes": sc.graph.node_count,
        "edges": sorted([list(e) for e in sc.graph.edges]),
        "agents": [{"A": _arr(a.A), "B": _arr(a.B), "Q": _arr(a.Q), "R": _arr(a.R),
                    "U": _arr(a.U), "L": _arr(a.L), "w": _arr(a.w)} for a in sc.agents],
        "constraints": [{"id": c.id, "budget": c.budget, "applies_to": c.applies_to,
                         "terms": [{"agent": t.agent, "a": _arr(t.a), "offset": t.offset,
                                    "M": None if t.M is None else _arr(t.M)} for t in c.terms]}
                        for c in sc.constraints],
        "horizon": sc.horizon, "alpha": sc.alpha, "delta": sc.delta, "w": sc.w,
        "gamma": sc.gamma, "q_max": sc.q_max, "d_min": sc.d_min, "mode": sc.mode,
        "weight_scheme": sc.weight_scheme, "names": sc.names,
        "slack_anchor": sc.slack_anchor, "rdp_slack": sc.rdp_slack,
    }


def scenario_from_dict(d) -> Scenario:
    graph = CouplingGraph(d["nodes"], frozenset(tuple(e) for e in d["edges"]))
    agents = [SubsystemModel(**a) for a in d["agents"]]
    cons = [CoupledConstraint(c["id"], [ConstraintTerm(**t) for t in c["terms"]],
                              c["budget"], c["applies_to"]) for c in d["constraints"]]
    return Scenario(graph, agents, cons, d["horizon"], d["alpha"], d["delta"], d["w"],
                    d["gamma"], d["q_max"], d["d_min"], d["mode"], d["weight_scheme"],
                    d.get("names"), slack_anchor=bool(d.get("slack_anchor", False)),
                    rdp_slack=bool(d.get("rdp_slack", True)))


def save_scenario(sc: Scenario, path):
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(sc), fh, sort_keys=False)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(yaml.safe_load(fh))


# CSV ---------------------------------------------------------------------

def _write(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows([[_fmt(v) for v in r] for r in rows])
    except OSError as exc:
        raise BenchIOError(f"cannot write {path}: {exc}") from exc


def trace_rows(trace, platoon: PlatoonConfig | None = None):
    """Header and rows of a trace; platoon traces are shown in absolute units."""
    header = ["step"]
    if platoon is not None:
        for i in range(platoon.followers):
            header += [f"speed_{i + 1}", f"position_{i + 1}", f"input_{i + 1}"]
    elif trace.steps:
        for i, (x, u) in enumerate(zip(trace.steps[0].x, trace.steps[0].u)):
            header += [f"x{i}_{j}" for j in range(len(x))] + [f"u{i}_{j}" for j in range(len(u))]
    header += ["stage_cost", "J"]
    rows = []
    for rec in trace.steps:
        row = [rec.k]
        for i, (x, u) in enumerate(zip(rec.x, rec.u)):
            if platoon is not None:
                xa = x + reference_state(platoon, i + 1, rec.k)
                row += [xa[0], xa[1], float(u[0]) + reference_input(platoon)]
            else:
                row += list(x) + list(u)
        rows.append(row + [rec.stage_cost, rec.J])
    return header, rows


def emit_trace_csv(trace, path, platoon: PlatoonConfig | None = None):
    _write(path, *trace_rows(trace, platoon))


SWEEP_HEADER = ["N", "alpha", "status", "total_cost", "mean_time_s", "max_time_s"]


def emit_sweep_csv(result, path):
    rows = [[c.N, c.alpha, c.status, c.total_cost, c.mean_time_s, c.max_time_s]
            for c in result.cells]
    _write(path, SWEEP_HEADER, rows)


def emit_csv(obj, path, platoon: PlatoonConfig | None = None):
    """Write a closed-loop trace or a sweep result as CSV."""
    if hasattr(obj, "cells"):
        emit_sweep_csv(obj, path)
    else:
        emit_trace_csv(obj, path, platoon)
