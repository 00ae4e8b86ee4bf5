"""Agent dynamics, stage costs and the constraint catalogue of a scenario."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import CouplingGraph, GraphError, induce_subgraph
from .solver import ConvexProgram, QuadraticConstraint, solve

STAGE = "stage"
TERMINAL = "terminal"
SLACK_SUM = "slack_sum"

BUDGET_CONSERVING = "budget_conserving"
PAPER_LITERAL = "paper_literal"


class ModelError(ValueError):
    pass


def _vec(v, n, what):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (n,):
        raise ModelError(f"{what}: expected length {n}, got {v.shape[0]}")
    return v


@dataclass
class SubsystemModel:
    """``x+ = A x + B u + w`` with stage cost ``x'Qx + u'Ru`` and ``L <= u <= U``."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    U: np.ndarray
    L: np.ndarray
    w: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        n, m = self.B.shape
        if self.A.shape != (n, n):
            raise ModelError(f"A has shape {self.A.shape}, B has {self.B.shape}")
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if self.Q.shape != (n, n) or self.R.shape != (m, m):
            raise ModelError("Q/R dimensions do not match A/B")
        self.U = _vec(self.U, m, "U")
        self.L = _vec(self.L, m, "L")
        self.w = np.zeros(n) if self.w is None else _vec(self.w, n, "w")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def invariant_violations(self, name="agent"):
        out = []
        for label, M in (("Q", self.Q), ("R", self.R)):
            if not np.allclose(M, M.T):
                out.append(f"{name}: {label} not symmetric")
            elif np.linalg.eigvalsh(M).min() <= 0:
                out.append(f"{name}: {label} not positive definite")
        if np.any(self.L > self.U):
            out.append(f"{name}: input lower bound exceeds upper bound")
        return out


@dataclass
class ConstraintTerm:
    """``g(x) = x'Mx + a x + offset`` for one participating agent."""

    agent: int
    a: np.ndarray
    offset: float = 0.0
    M: np.ndarray | None = None

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).reshape(-1)
        self.offset = float(self.offset)
        if self.M is not None:
            self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
            if self.M.shape != (self.a.size, self.a.size):
                raise ModelError(f"term of agent {self.agent}: M/a size mismatch")

    @property
    def kind(self):
        return "affine" if self.M is None else "quadratic"

    def __call__(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.a.size:
            raise ModelError(f"term of agent {self.agent}: expected {self.a.size} values, got {x.size}")
        val = float(self.a @ x) + self.offset
        if self.M is not None:
            val += float(x @ self.M @ x)
        return val


@dataclass
class CoupledConstraint:
    """``sum_j g_sj(x_j) <= budget`` over ``participants``."""

    id: str
    terms: list
    budget: float = 0.0
    applies_to: str = STAGE

    def __post_init__(self):
        self.budget = float(self.budget)
        self.terms = sorted(self.terms, key=lambda t: t.agent)
        if len({t.agent for t in self.terms}) != len(self.terms):
            raise ModelError(f"constraint {self.id}: duplicate participant")

    @property
    def participants(self):
        return tuple(t.agent for t in self.terms)

    @property
    def is_local(self):
        return len(self.terms) == 1

    def term(self, agent):
        for t in self.terms:
            if t.agent == agent:
                return t
        raise KeyError(agent)


@dataclass
class Scenario:
    """Plant, constraints and tuning of one distributed MPC problem."""

    graph: CouplingGraph
    agents: list
    constraints: list
    horizon: int
    alpha: float
    delta: float | dict = 0.5
    w: float | None = None
    gamma: float | None = None
    q_max: int = 5
    d_min: float | None = None
    mode: str = BUDGET_CONSERVING
    weight_scheme: str = "metropolis"
    names: list | None = None
    meta: dict = field(default_factory=dict)
    # anchor the slack-sum row at each agent's least reachable RDP slack, which
    # lets agents trade slack; off, every agent keeps its own RDP row
    slack_anchor: bool = False
    # False fixes every RDP slack v_i to zero (no slack trading at all)
    rdp_slack: bool = True

    def delta_for(self, s_id):
        if isinstance(self.delta, dict):
            return float(self.delta.get(s_id, self.delta.get("default", 0.5)))
        return float(self.delta)

    @property
    def coupled(self):
        return [c for c in self.constraints if not c.is_local]

    def local_constraints(self, agent):
        return [c for c in self.constraints if c.is_local and c.participants[0] == agent]

    def constraints_of(self, agent):
        return [c for c in self.constraints if agent in c.participants]


def stage_cost(agent: SubsystemModel, x, u):
    x = _vec(x, agent.n, "state")
    u = _vec(u, agent.m, "input")
    return float(x @ agent.Q @ x + u @ agent.R @ u)


def step_dynamics(agent: SubsystemModel, x, u):
    x = _vec(x, agent.n, "state")
    u = _vec(u, agent.m, "input")
    return agent.A @ x + agent.B @ u + agent.w


def evaluate_constraint(con: CoupledConstraint, states):
    """Residual ``sum_j g_sj(x_j) - b_s``; the constraint holds iff it is ``<= 0``."""
    total = 0.0
    for t in con.terms:
        if t.agent not in states:
            raise ModelError(f"constraint {con.id}: no state for participant {t.agent}")
        total += t(states[t.agent])
    return total - con.budget


def _local_feasible_point(scenario, agent, extra_terms):
    """Is there an ``x`` meeting the agent's local rows and ``g <= 0`` for ``extra_terms``?"""
    model = scenario.agents[agent]
    n = model.n
    G, h, quad = [], [], []
    rows = [(c.terms[0], c.budget) for c in scenario.local_constraints(agent)
            if c.applies_to == STAGE]
    rows += [(t, 0.0) for t in extra_terms]
    for t, bound in rows:
        if t.M is None:
            G.append(t.a)
            h.append(bound - t.offset)
        else:
            quad.append(QuadraticConstraint(t.M, t.a, bound - t.offset))
    prog = ConvexProgram(1e-6 * np.eye(n), G=np.array(G).reshape(-1, n) if G else None,
                         h=h if G else None, quad=quad)
    return solve(prog, tol=1e-9, relative=True)


def validate_scenario(scenario: Scenario):
    """Lint a scenario; returns a list of human-readable violations (empty = valid)."""
    out = []
    if not 0 < scenario.alpha <= 1:
        out.append(f"alpha={scenario.alpha} out of (0,1]")
    if scenario.horizon < 1:
        out.append(f"horizon N={scenario.horizon} must be >= 1")
    if scenario.q_max < 1:
        out.append(f"q_max={scenario.q_max} must be >= 1")
    if scenario.w is not None and scenario.w <= 0:
        out.append("penalty weight w must be positive")
    if scenario.gamma is not None and scenario.gamma <= 0:
        out.append("step size gamma must be positive")
    if scenario.mode not in (BUDGET_CONSERVING, PAPER_LITERAL):
        out.append(f"unknown redistribution mode {scenario.mode!r}")
    if len(scenario.agents) != scenario.graph.node_count:
        out.append("agent count differs from graph node count")
    for i, a in enumerate(scenario.agents):
        out.extend(a.invariant_violations(f"agent {i}"))

    for c in scenario.constraints:
        d = scenario.delta_for(c.id)
        if not 0 < d <= 1:
            out.append(f"constraint {c.id}: delta={d} out of (0,1]")
        if c.budget < 0:
            out.append(f"constraint {c.id}: negative budget {c.budget}")
        if c.is_local and c.budget != 0:
            out.append(f"constraint {c.id}: local constraint must have zero budget")
        for t in c.terms:
            if not 0 <= t.agent < len(scenario.agents):
                out.append(f"constraint {c.id}: invalid agent id {t.agent}")
                continue
            if t.a.size != scenario.agents[t.agent].n:
                out.append(f"constraint {c.id}: term of agent {t.agent} has wrong dimension")
            if t.M is not None:
                if not np.allclose(t.M, t.M.T) or np.linalg.eigvalsh(t.M).min() < -1e-10:
                    out.append(f"constraint {c.id}: term of agent {t.agent} is not convex")
        if not c.is_local:
            try:
                sub = induce_subgraph(scenario.graph, c.participants, c.id)
                if not sub.is_connected():
                    out.append(f"constraint {c.id}: participants {c.participants} "
                               "do not induce a connected subgraph")
            except GraphError as exc:
                out.append(str(exc))
    if out:
        return out

    # Each agent can put all its coupled terms at or below zero
    # while meeting its local state constraints.
    for i in range(len(scenario.agents)):
        terms = [c.term(i) for c in scenario.coupled if i in c.participants
                 and c.applies_to == STAGE]
        sol = _local_feasible_point(scenario, i, terms)
        if not sol.optimal:
            out.append(f"agent {i}: no local state with all coupled "
                       f"terms <= 0: {sol.message}")
    return out
