"""Command line entry point: ``vfdmpc {simulate,sweep,validate,oracle-gap}``."""

from __future__ import annotations

import argparse
import sys

from ..assembly import assemble_step
from ..distopt import MessageLog, run_distributed
from ..model import validate_scenario
from ..mpc import simulate
from ..oracle import gap_report, solve_centralized
from .io import (BenchIOError, default_config, emit_csv, load_config, load_scenario,
                 platoon_config)
from .platoon import PlatoonError, build_platoon_scenario, initial_errors
from .sweep import run_sweep

EXIT_OK = 0
EXIT_CELL_ERROR = 1
EXIT_USAGE = 2


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (defaults apply when omitted)")
    common.add_argument("-N", "--horizon", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--delta", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--q-max", type=int)
    common.add_argument("--d-min", type=float)
    common.add_argument("--w", type=float, help="penalty weight on the relaxation variables")
    common.add_argument("--mode", choices=["budget_conserving", "paper_literal"])
    common.add_argument("--weight-scheme", choices=["metropolis", "uniform"])
    common.add_argument("--drag", choices=["mass_normalized", "paper_literal"])
    common.add_argument("--steps", type=int)
    common.add_argument("--followers", type=int)
    common.add_argument("--seed", type=int, default=None,
                        help="reserved for stochastic variants; currently unused")

    p = argparse.ArgumentParser(prog="vfdmpc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="run one closed loop")
    s.add_argument("--out", help="trace CSV path")
    s.add_argument("--messages", help="write the message log (JSON lines) here")
    w = sub.add_parser("sweep", parents=[common], help="horizon/alpha grid")
    w.add_argument("--horizons", type=int, nargs="+")
    w.add_argument("--alphas", type=float, nargs="+")
    w.add_argument("--workers", type=int, default=None)
    w.add_argument("--out", help="sweep CSV path")
    v = sub.add_parser("validate", parents=[common], help="lint a scenario")
    v.add_argument("--scenario", help="generic scenario YAML instead of the platoon")
    o = sub.add_parser("oracle-gap", parents=[common],
                       help="distributed vs centralized objective at the initial state")
    o.add_argument("--iterations", type=int, default=None, help="iterations (defaults to q_max)")
    return p


def _apply_overrides(cfg, args):
    ctrl, plat = cfg["controller"], cfg["platoon"]
    for key in ("horizon", "alpha", "delta", "gamma", "q_max", "d_min", "w", "mode",
                "weight_scheme"):
        val = getattr(args, key, None)
        if val is not None:
            ctrl[key] = val
    for key in ("drag", "steps", "followers"):
        val = getattr(args, key, None)
        if val is not None:
            plat[key] = val
    if args.followers is not None and len(plat["initial_error"]) != args.followers:
        plat["initial_error"] = [plat["initial_error"][0]] * args.followers
    return cfg


def _scenario(cfg, **over):
    ctrl = dict(cfg["controller"], **over)
    pc = platoon_config(cfg)
    sc = build_platoon_scenario(pc, N=ctrl["horizon"], alpha=ctrl["alpha"], delta=ctrl["delta"],
                                gamma=ctrl["gamma"], q_max=ctrl["q_max"], d_min=ctrl["d_min"],
                                w=ctrl["w"], mode=ctrl["mode"],
                                weight_scheme=ctrl["weight_scheme"])
    return pc, sc


def _invalid(sc):
    issues = validate_scenario(sc)
    for msg in issues:
        print(f"invalid scenario: {msg}")
    return bool(issues)


def _simulate(cfg, args):
    pc, sc = _scenario(cfg)
    if _invalid(sc):
        return EXIT_CELL_ERROR
    log = None
    sink = None
    if args.messages:
        sink = open(args.messages, "w")
        log = MessageLog(sink, keep=False)
    try:
        trace = simulate(sc, initial_errors(pc), pc.steps, log=log)
    finally:
        if sink is not None:
            sink.close()
    if args.out:
        emit_csv(trace, args.out, pc)
    print(f"status={trace.label} steps={len(trace.steps)} total_cost={trace.total_cost:.10g}")
    if not trace.completed:
        print(f"reason: {trace.failure}")
    return EXIT_OK


def _sweep(cfg, args):
    horizons = args.horizons or cfg["sweep"]["horizons"]
    alphas = args.alphas or cfg["sweep"]["alphas"]
    ctrl = cfg["controller"]
    res = run_sweep(platoon_config(cfg), horizons, alphas, delta=ctrl["delta"],
                    q_max=ctrl["q_max"], workers=args.workers, gamma=ctrl["gamma"],
                    d_min=ctrl["d_min"], w=ctrl["w"], mode=ctrl["mode"],
                    weight_scheme=ctrl["weight_scheme"])
    if args.out:
        emit_csv(res, args.out)
    for c in res.cells:
        cost = "-" if c.total_cost is None else f"{c.total_cost:.4f}"
        print(f"N={c.N:<3d} alpha={c.alpha:<5g} {c.status:<22s} cost={cost}")
    return EXIT_CELL_ERROR if res.has_errors else EXIT_OK


def _validate(cfg, args):
    sc = load_scenario(args.scenario) if args.scenario else _scenario(cfg)[1]
    issues = validate_scenario(sc)
    for msg in issues:
        print(msg)
    if not issues:
        print("scenario valid")
    return EXIT_CELL_ERROR if issues else EXIT_OK


def _oracle_gap(cfg, args):
    pc, sc = _scenario(cfg)
    if _invalid(sc):
        return EXIT_CELL_ERROR
    x0 = initial_errors(pc)
    step = assemble_step(sc, x0)
    central = solve_centralized(sc, x0, step=step)
    if not central.optimal:
        print(f"centralized problem not solved: {central.solution.message}")
        return EXIT_CELL_ERROR
    q = args.iterations or sc.q_max
    res = run_distributed(sc, step, q_max=q)
    print(f"J*={central.objective:.10g}")
    print("q,J,gap")
    for d in res.diagnostics:
        print(f"{d.q},{d.J:.10g},{gap_report(d.J, central.objective):.3e}")
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        cfg = _apply_overrides(cfg, args)
        handler = {"simulate": _simulate, "sweep": _sweep, "validate": _validate,
                   "oracle-gap": _oracle_gap}[args.command]
        return handler(cfg, args)
    except (BenchIOError, PlatoonError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
