"""Centralized reference solution of the per-step MPC problem."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .assembly import StepProblem, assemble_step
from .solver import ConvexProgram, QuadraticConstraint, SolverStatus, solve


@dataclass
class CentralSolution:
    status: SolverStatus
    ys: list
    objective: float
    solution: object
    program: ConvexProgram

    @property
    def y(self):
        return np.concatenate(self.ys)

    @property
    def optimal(self):
        return self.status == SolverStatus.OPTIMAL


def _offsets(step):
    sizes = [p.layout.size for p in step.agents]
    return np.concatenate([[0], np.cumsum(sizes)]), sum(sizes)


def _embed(v, off, size, total):
    out = np.zeros(total)
    out[off:off + size] = v
    return out


def _embed_matrix(M, off, size, total):
    out = np.zeros((total, total))
    out[off:off + size, off:off + size] = M
    return out


def centralized_program(step: StepProblem) -> ConvexProgram:
    """Stack every agent's rows and sum each coupled row into one program."""
    offs, total = _offsets(step)
    H = sla.block_diag(*[p.H for p in step.agents])
    F = sla.block_diag(*[p.F for p in step.agents])
    e = np.concatenate([p.e for p in step.agents])
    lb = np.concatenate([p.lb for p in step.agents])
    ub = np.concatenate([p.ub for p in step.agents])
    G_blocks = [np.hstack([np.zeros((p.G.shape[0], offs[i])), p.G,
                           np.zeros((p.G.shape[0], total - offs[i + 1]))])
                for i, p in enumerate(step.agents)]
    h = [p.h for p in step.agents]
    quad = []
    for i, p in enumerate(step.agents):
        size = p.layout.size
        for qc in p.quad:
            quad.append(QuadraticConstraint(_embed_matrix(qc.M, offs[i], size, total),
                                            _embed(qc.a, offs[i], size, total), qc.r))
    for row in step.rows:
        a = np.zeros(total)
        M = np.zeros((total, total))
        const = 0.0
        curved = False
        for j in row.participants:
            t = row.terms[j]
            size = step.agents[j].layout.size
            a += _embed(t.a, offs[j], size, total)
            const += t.const
            if t.M is not None:
                M += _embed_matrix(t.M, offs[j], size, total)
                curved = True
        if curved:
            quad.append(QuadraticConstraint(M, a, row.budget - const))
        else:
            G_blocks.append(a[None, :])
            h.append([row.budget - const])
    G = np.vstack(G_blocks) if G_blocks else None
    h = np.concatenate(h) if G_blocks else None
    return ConvexProgram(H, None, F, e, G, h, quad, lb, ub)


def solve_centralized(scenario, x, k=0, tol=1e-9, step: StepProblem | None = None) -> CentralSolution:
    if step is None:
        step = assemble_step(scenario, x, k)
    prog = centralized_program(step)
    sol = solve(prog, tol=tol, max_iter=200, relative=True)
    offs, _ = _offsets(step)
    ys = [sol.y[offs[i]:offs[i + 1]] for i in range(len(step.agents))]
    return CentralSolution(sol.status, ys, step.objective(ys), sol, prog)


def gap_report(J, J_star):
    """Relative suboptimality ``(J - J*) / max(1, |J*|)``."""
    if not np.isfinite(J_star):
        raise ValueError("centralized optimum must be finite")
    return (J - J_star) / max(1.0, abs(J_star))
