"""Per-step MPC problem assembly shared by the distributed and centralized solvers.

Each agent's rows are built once here; ``distopt`` adds consensus slack and
tightening on top, ``oracle`` stacks them into one program. Keeping a single
row builder guarantees both formulations describe the same problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decision import AgentDecision
from .model import SLACK_SUM, STAGE, TERMINAL, evaluate_constraint
from .solver import ConvexProgram, QuadraticConstraint, SolverStatus, solve
from .stability import SLACK_SUM_ID, build_rdp_constraints

FEAS_TOL = 1e-8


class InitialInfeasible(RuntimeError):
    def __init__(self, k, violated):
        self.k = k
        self.violated = violated
        super().__init__(f"measured state at step {k} violates {', '.join(violated)}")


@dataclass
class RowTerm:
    """``c(y) = y'My + a'y + const`` on one agent's decision vector."""

    M: np.ndarray | None
    a: np.ndarray
    const: float

    def __call__(self, y):
        val = float(self.a @ y) + self.const
        if self.M is not None:
            val += float(y @ self.M @ y)
        return val


@dataclass
class CouplingRow:
    """One coupled inequality ``sum_j c_sj(y_j) <= budget`` of the compact problem."""

    id: str
    base: str
    stage: int | None
    participants: tuple
    budget: float
    terms: dict

    def residual(self, ys):
        return sum(self.terms[j](ys[j]) for j in self.participants) - self.budget


@dataclass
class AgentProblem:
    agent: int
    layout: AgentDecision
    H: np.ndarray
    F: np.ndarray
    e: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    G: np.ndarray
    h: np.ndarray
    quad: list
    rows: list = field(default_factory=list)

    def cost(self, y):
        return float(0.5 * y @ self.H @ y)


@dataclass
class StepProblem:
    k: int
    x: list
    agents: list
    rows: list
    rdp: object
    anchors: list

    def row(self, row_id):
        for r in self.rows:
            if r.id == row_id:
                return r
        raise KeyError(row_id)

    def rows_of(self, agent):
        return [r for r in self.rows if agent in r.participants]

    def coupling_residuals(self, ys):
        return {r.id: r.residual(ys) for r in self.rows}

    def objective(self, ys):
        return sum(p.cost(y) for p, y in zip(self.agents, ys))


def free_response(model, x0, N):
    """Open-loop trajectory with the input held at the point of the box nearest zero."""
    u0 = np.clip(np.zeros(model.m), model.L, model.U)
    xs = [np.asarray(x0, dtype=float)]
    for _ in range(N):
        xs.append(model.A @ xs[-1] + model.B @ u0 + model.w)
    return np.array(xs), u0


def _term_on_y(term, E):
    a = term.a @ E
    M = None if term.M is None else E.T @ term.M @ E
    return M, a


def _stage_range(tag, N):
    if tag == STAGE:
        return range(0, N)
    if tag == TERMINAL:
        return range(N, N + 1)
    raise ValueError(tag)


def least_rdp_slack(problem: AgentProblem, rdp_row, fallback):
    """Least RDP slack ``v_i`` the agent can reach with its own rows alone.

    Minimizes the terminal stage cost over the agent's dynamics, input box and
    local rows. If that program fails, the decision vector ``fallback`` is
    used instead.
    """
    M = rdp_row.M
    n = problem.layout.size
    prog = ConvexProgram(2.0 * M + 1e-9 * np.eye(n), F=problem.F, e=problem.e,
                         G=problem.G if len(problem.h) else None,
                         h=problem.h if len(problem.h) else None,
                         quad=problem.quad[:-1], lb=problem.lb, ub=problem.ub)
    sol = solve(prog, tol=1e-10, relative=True)
    if sol.status == SolverStatus.OPTIMAL:
        y = sol.y
    else:
        y = fallback
    return float(y @ M @ y) - rdp_row.rhs


def _split_deficit(budget, shifts, anchor):
    """Budget left after the anchor shifts; a joint deficit is split evenly."""
    budget = budget - sum(shifts.values())
    if anchor and budget < 0:
        # the anchors jointly violate the row: every participant takes an
        # equal part of the deficit and the shifted budget is 0
        shifts = {i: v + budget / len(shifts) for i, v in shifts.items()}
        budget = 0.0
    return budget, shifts


def _slack_row(scenario, rdp, agents, anchors, anchor):
    slack = rdp.slack_sum
    N = scenario.horizon
    shifts = {}
    for t in slack.terms:
        i = t.agent
        if anchor and scenario.slack_anchor:
            model, lay = scenario.agents[i], agents[i].layout
            y_free = np.zeros(lay.size)
            for j in range(N + 1):
                y_free[lay.x(j)] = anchors[i][j]
                y_free[lay.u(j)] = np.clip(np.zeros(model.m), model.L, model.U)
            shifts[i] = least_rdp_slack(agents[i], rdp.row(i), y_free)
        else:
            shifts[i] = 0.0
    budget, shifts = _split_deficit(slack.budget, shifts, anchor)
    terms = {}
    for t in slack.terms:
        lay = agents[t.agent].layout
        a = np.zeros(lay.size)
        a[lay.v] = 1.0
        terms[t.agent] = RowTerm(None, a, -shifts[t.agent])
    return CouplingRow(SLACK_SUM_ID, SLACK_SUM_ID, None, slack.participants, budget, terms)


def initial_violations(scenario, x):
    states = dict(enumerate(x))
    return [c.id for c in scenario.constraints
            if c.applies_to == STAGE and evaluate_constraint(c, states) > FEAS_TOL]


def assemble_step(scenario, x, k=0, anchor=True) -> StepProblem:
    """Build every agent's rows for the MPC problem at step ``k``.

    ``x`` holds the measured (error-coordinate) state of each agent. Coupled
    rows are expressed relative to each agent's free response, which shifts
    each agent's term to zero at a locally computable trajectory without
    changing the constraint itself.
    """
    x = [np.asarray(xi, dtype=float) for xi in x]
    bad = initial_violations(scenario, x)
    if bad:
        raise InitialInfeasible(k, bad)
    N = scenario.horizon
    rdp = build_rdp_constraints(scenario, x)
    anchors = []
    agents = []
    for i, model in enumerate(scenario.agents):
        lay = AgentDecision(model.n, model.m, N)
        n, m = model.n, model.m
        H = np.zeros((lay.size, lay.size))
        for j in range(N):
            H[lay.x(j), lay.x(j)] = 2.0 * model.Q
            H[lay.u(j), lay.u(j)] = 2.0 * model.R
        F = np.zeros((n * (N + 1), lay.size))
        e = np.zeros(n * (N + 1))
        F[:n, lay.x(0)] = np.eye(n)
        e[:n] = x[i]
        for j in range(N):
            r = slice(n * (j + 1), n * (j + 2))
            F[r, lay.x(j + 1)] = np.eye(n)
            F[r, lay.x(j)] = -model.A
            F[r, lay.u(j)] = -model.B
            e[r] = model.w
        lb = np.full(lay.size, -np.inf)
        ub = np.full(lay.size, np.inf)
        for j in range(N + 1):
            lb[lay.u(j)] = model.L
            ub[lay.u(j)] = model.U
        G, h, quad = [], [], []
        for c in scenario.local_constraints(i):
            if c.applies_to not in (STAGE, TERMINAL):
                continue
            t = c.terms[0]
            for j in _stage_range(c.applies_to, N):
                M, a = _term_on_y(t, lay.select_x(j))
                if M is None:
                    G.append(a)
                    h.append(c.budget - t.offset)
                else:
                    quad.append(QuadraticConstraint(M, a, c.budget - t.offset))
        row = rdp.row(i)
        extra = []
        if not getattr(scenario, "rdp_slack", True):
            extra.append(np.eye(lay.size)[lay.v])
        if row.terminal_equality:
            extra.extend(np.vstack([lay.select_x(N), lay.select_u(N)]))
        else:
            quad.append(row.as_quadratic())
        if extra:
            F = np.vstack([F] + [r[None, :] for r in extra])
            e = np.concatenate([e, np.zeros(len(extra))])
        agents.append(AgentProblem(i, lay, H, F, e, lb, ub,
                                   np.array(G).reshape(-1, lay.size), np.array(h), quad))
        anchors.append(free_response(model, x[i], N)[0])

    rows = []
    for c in scenario.coupled:
        if c.applies_to == SLACK_SUM:
            continue
        for j in _stage_range(c.applies_to, N):
            shifts = {t.agent: t(anchors[t.agent][j]) if anchor else 0.0 for t in c.terms}
            budget, shifts = _split_deficit(c.budget, shifts, anchor)
            terms = {}
            for t in c.terms:
                lay = agents[t.agent].layout
                M, a = _term_on_y(t, lay.select_x(j))
                terms[t.agent] = RowTerm(M, a, t.offset - shifts[t.agent])
            rows.append(CouplingRow(f"{c.id}@{j}", c.id, j, c.participants, budget, terms))
    if rdp.slack_sum is not None:
        rows.append(_slack_row(scenario, rdp, agents, anchors, anchor))
    for r in rows:
        for j in r.participants:
            agents[j].rows.append(r.id)
    return StepProblem(k, x, agents, rows, rdp, anchors)
