"""Relaxed-dynamic-programming stability rows and Lyapunov certificates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decision import AgentDecision
from .model import SLACK_SUM, ConstraintTerm, CoupledConstraint
from .solver import QuadraticConstraint

SLACK_SUM_ID = "slack_sum"


class StabilityError(ValueError):
    pass


@dataclass
class RdpRow:
    """``l_i(x(k+N), u(k+N)) - v_i <= rhs`` expressed on the agent's decision vector."""

    agent: int
    rhs: float
    M: np.ndarray
    a: np.ndarray
    # without slack and with rhs <= 0 the row only admits l = 0, i.e. a
    # terminal equality; kept as equalities since the quadratic form has no
    # strictly feasible point
    terminal_equality: bool = False

    def as_quadratic(self):
        return QuadraticConstraint(self.M, self.a, self.rhs)

    def value(self, y):
        return float(y @ self.M @ y + self.a @ y)


@dataclass
class RdpConstraintSet:
    alpha: float
    rows: list
    slack_sum: CoupledConstraint

    def row(self, agent):
        return self.rows[agent]


def rdp_rhs(Q, x, alpha):
    x = np.asarray(x, dtype=float)
    return float((1.0 - alpha) * x @ Q @ x)


def slack_sum_constraint(n_agents):
    """``sum_i v_i <= 0`` as an ordinary coupled constraint over every agent."""
    return CoupledConstraint(SLACK_SUM_ID,
                             [ConstraintTerm(i, [1.0]) for i in range(n_agents)],
                             budget=0.0, applies_to=SLACK_SUM)


def build_rdp_constraints(scenario, measured_states) -> RdpConstraintSet:
    """One RDP row per agent plus the slack-sum row.

    With ``scenario.rdp_slack`` off the slack ``v_i`` is fixed to zero, so the
    rows carry no ``v`` term and the slack-sum row is ``None``.
    """
    alpha = scenario.alpha
    slack = getattr(scenario, "rdp_slack", True)
    if not 0 < alpha <= 1:
        raise StabilityError(f"alpha={alpha} out of (0,1]")
    rows = []
    for i, model in enumerate(scenario.agents):
        lay = AgentDecision(model.n, model.m, scenario.horizon)
        Ex = lay.select_x(lay.N)
        Eu = lay.select_u(lay.N)
        M = Ex.T @ model.Q @ Ex + Eu.T @ model.R @ Eu
        a = np.zeros(lay.size)
        rhs = rdp_rhs(model.Q, measured_states[i], alpha)
        if slack:
            a[lay.v] = -1.0
        rows.append(RdpRow(i, rhs, M, a, terminal_equality=not slack and rhs <= 0))
    return RdpConstraintSet(alpha, rows,
                            slack_sum_constraint(len(scenario.agents)) if slack else None)


def lyapunov_tolerance(J_k):
    return 1e-6 * (1.0 + abs(J_k))


def check_lyapunov_decrease(J_k, J_k_next, ell_k, alpha, tol=0.0):
    """``J(k) >= alpha * l(k) + J(k+1) - tol``."""
    return bool(J_k >= alpha * ell_k + J_k_next - tol)


def performance_bound(J_0, alpha):
    """Upper bound ``J_0 / alpha`` on the infinite closed-loop cost."""
    if not 0 < alpha <= 1:
        raise StabilityError(f"alpha={alpha} out of (0,1]")
    return J_0 / alpha
