"""Receding-horizon closed loop around the distributed optimizer."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import InitialInfeasible, StepProblem, assemble_step
from .distopt import ConsensusState, LocalInfeasible, MessageLog, run_distributed, shift_consensus
from .model import stage_cost, step_dynamics

COMPLETED = "Completed"
INFEASIBLE = "InfeasibleAtStep"


@dataclass
class StepRecord:
    k: int
    x: list
    u: list
    stage_cost: float
    J: float
    diagnostics: list
    wall_time: float
    warm_fallback: bool = False


@dataclass
class ClosedLoopTrace:
    steps: list = field(default_factory=list)
    status: str = COMPLETED
    failed_step: int | None = None
    failure: str | None = None
    failure_diagnostics: list | None = None
    final_x: list | None = None

    @property
    def completed(self):
        return self.status == COMPLETED

    @property
    def label(self):
        return COMPLETED if self.completed else f"{INFEASIBLE}({self.failed_step})"

    @property
    def stage_costs(self):
        return np.array([s.stage_cost for s in self.steps])

    @property
    def J(self):
        return np.array([s.J for s in self.steps])

    @property
    def total_cost(self):
        return float(self.stage_costs.sum())

    @property
    def wall_times(self):
        return np.array([s.wall_time for s in self.steps])


@dataclass
class StepOutcome:
    u: list
    J: float
    result: object
    state: ConsensusState
    step: StepProblem
    warm_fallback: bool = False


def mpc_step(scenario, x, state: ConsensusState | None = None, k=0, workers=None,
             log: MessageLog | None = None) -> StepOutcome:
    """Solve one MPC step distributedly and return every agent's first input.

    A warm-started step whose first local solves fail is retried from a cold
    consensus state before infeasibility is reported.
    """
    step = assemble_step(scenario, x, k)
    warm = None if state is None else shift_consensus(state, step, scenario)
    fallback = False
    try:
        res = run_distributed(scenario, step, warm, workers=workers, log=log)
    except LocalInfeasible:
        if warm is None:
            raise
        res = run_distributed(scenario, step, None, workers=workers, log=log)
        fallback = True
    u = [p.layout.inputs(y)[0].copy() for p, y in zip(step.agents, res.ys)]
    return StepOutcome(u, res.objective, res, res.state, step, fallback)


def simulate(scenario, x0, steps, workers=None, log: MessageLog | None = None) -> ClosedLoopTrace:
    """Closed loop for ``steps`` steps or until a step has no feasible solution."""
    x = [np.asarray(xi, dtype=float) for xi in x0]
    trace = ClosedLoopTrace()
    state = None
    for k in range(steps):
        t0 = time.perf_counter()
        try:
            out = mpc_step(scenario, x, state, k, workers=workers, log=log)
        except (LocalInfeasible, InitialInfeasible) as exc:
            trace.status = INFEASIBLE
            trace.failed_step = k
            trace.failure = str(exc)
            trace.failure_diagnostics = getattr(exc, "diagnostics", None)
            break
        ell = sum(stage_cost(a, xi, ui) for a, xi, ui in zip(scenario.agents, x, out.u))
        trace.steps.append(StepRecord(k, [xi.copy() for xi in x], out.u, ell, out.J,
                                      out.result.diagnostics, time.perf_counter() - t0,
                                      out.warm_fallback))
        x = [step_dynamics(a, xi, ui) for a, xi, ui in zip(scenario.agents, x, out.u)]
        state = out.state
    trace.final_x = x
    return trace
