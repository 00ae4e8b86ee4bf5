"""Horizon/alpha grids of closed-loop platoon runs."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..model import ModelError, validate_scenario
from ..mpc import simulate
from .platoon import PlatoonConfig, build_platoon_scenario, initial_errors

ERROR = "Error"


@dataclass
class SweepCell:
    N: int
    alpha: float
    status: str
    total_cost: float | None
    mean_time_s: float
    max_time_s: float
    detail: str | None = None
    trace: object = None

    @property
    def feasible(self):
        return self.status == "Completed"

    @property
    def error(self):
        return self.status.startswith(ERROR)


@dataclass
class SweepResult:
    horizons: list
    alphas: list
    cells: list = field(default_factory=list)

    def cell(self, N, alpha):
        for c in self.cells:
            if c.N == N and np.isclose(c.alpha, alpha):
                return c
        raise KeyError((N, alpha))

    def feasible_alphas(self, N):
        return [a for a in self.alphas if self.cell(N, a).feasible]

    @property
    def has_errors(self):
        return any(c.error for c in self.cells)


def run_cell(cfg: PlatoonConfig, N, alpha, delta=0.5, q_max=5, gamma=None, d_min=None, w=None,
             mode="budget_conserving", weight_scheme="metropolis", steps=None, keep_trace=False):
    t0 = time.perf_counter()
    try:
        sc = build_platoon_scenario(cfg, N=N, alpha=alpha, delta=delta, gamma=gamma, q_max=q_max,
                                    d_min=d_min, w=w, mode=mode, weight_scheme=weight_scheme)
        issues = validate_scenario(sc)
        if issues:
            raise ModelError("; ".join(issues))
        trace = simulate(sc, initial_errors(cfg), cfg.steps if steps is None else steps)
    except Exception as exc:  # a broken cell must not take the grid down
        return SweepCell(N, alpha, f"{ERROR}({type(exc).__name__})", None,
                         0.0, time.perf_counter() - t0, str(exc))
    times = trace.wall_times
    cost = trace.total_cost if trace.completed else None
    return SweepCell(N, alpha, trace.label, cost,
                     float(times.mean()) if times.size else 0.0,
                     float(times.max()) if times.size else 0.0,
                     trace.failure, trace if keep_trace else None)


def _run_cell(args):
    cfg, N, alpha, kw = args
    return run_cell(cfg, N, alpha, **kw)


def run_sweep(cfg: PlatoonConfig, horizons, alphas, delta=0.5, q_max=5, workers=None,
              keep_traces=False, **kw) -> SweepResult:
    """Simulate every ``(N, alpha)`` cell; cells fail independently.

    Cells may run in worker processes; the result is always in grid order.
    """
    if not horizons or not alphas:
        raise ValueError("horizon and alpha lists must be nonempty")
    kw = dict(kw, delta=delta, q_max=q_max, keep_trace=keep_traces)
    jobs = [(cfg, N, a, kw) for N in horizons for a in alphas]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            cells = list(ex.map(_run_cell, jobs))
    else:
        cells = [_run_cell(j) for j in jobs]
    return SweepResult(list(horizons), list(alphas), cells)
