"""Seeded random multi-agent scenarios for property and convergence checks."""

from __future__ import annotations

import numpy as np

from ..graph import CouplingGraph
from ..model import ConstraintTerm, CoupledConstraint, Scenario, SubsystemModel


def random_agent(rng, n=2, m=1, rho=0.98):
    A = rng.normal(size=(n, n))
    A *= rho / max(1e-9, np.abs(np.linalg.eigvals(A)).max())
    B = rng.normal(size=(n, m))
    Lq = rng.normal(size=(n, n))
    Q = Lq @ Lq.T + 0.5 * np.eye(n)
    R = (0.1 + rng.random()) * np.eye(m)
    return SubsystemModel(A, B, Q, R, U=np.ones(m), L=-np.ones(m))


def random_scenario(rng, n_agents=None, N=4, alpha=0.1, delta=0.5, quadratic=False,
                    complete=False, q_max=5, scale=1.0, margin=(0.2, 1.0),
                    slack_anchor=False):
    """Agents on a chain (or complete graph) with one coupled row per edge.

    Each coupled row is ``sum_j a_j x_j (+ x_j' M_j x_j) <= b`` over an edge;
    ``quadratic`` adds a convex quadratic part to the terms. The budget is set
    so that the returned initial state satisfies every row with a random
    margin. Returns ``(scenario, x0)``.
    """
    n_agents = n_agents or int(rng.integers(2, 4))
    agents = [random_agent(rng) for _ in range(n_agents)]
    x0 = [scale * rng.normal(size=a.n) for a in agents]
    graph = CouplingGraph.complete(n_agents) if complete else CouplingGraph.chain(n_agents)
    cons = []
    for s, (i, j) in enumerate(sorted(graph.edges)):
        terms = []
        for a in (i, j):
            M = None
            if quadratic:
                L = 0.3 * rng.normal(size=(2, 2))
                M = L @ L.T
            terms.append(ConstraintTerm(a, rng.normal(size=2), 0.0, M))
        used = sum(t(x0[t.agent]) for t in terms)
        cons.append(CoupledConstraint(f"c{s}", terms,
                                      budget=max(used, 0.0) + float(rng.uniform(*margin))))
    sc = Scenario(graph, agents, cons, horizon=N, alpha=alpha, delta=delta, q_max=q_max,
                  slack_anchor=slack_anchor)
    return sc, x0


def sample_scenarios(seed, count, max_draws=None, q_check=1, **kw):
    """Draw ``count`` random scenarios whose first MPC step is well posed.

    A draw is kept when the centralized problem at ``x0`` is solved and the
    first ``q_check`` distributed iterations have feasible local problems.
    Returns ``(kept, rejected)`` where ``kept`` is a list of
    ``(draw_index, scenario, x0)``.
    """
    from ..assembly import InitialInfeasible, assemble_step
    from ..distopt import LocalInfeasible, run_distributed
    from ..oracle import solve_centralized

    rng = np.random.default_rng(seed)
    max_draws = max_draws or 50 * count
    kept, rejected = [], 0
    for draw in range(max_draws):
        if len(kept) == count:
            break
        sc, x0 = random_scenario(rng, **kw)
        try:
            step = assemble_step(sc, x0)
            if not solve_centralized(sc, x0, step=step).optimal:
                raise LocalInfeasible(-1, 0, "centralized problem not solved")
            run_distributed(sc, step, q_max=q_check)
        except (InitialInfeasible, LocalInfeasible):
            rejected += 1
            continue
        kept.append((draw, sc, x0))
    if len(kept) < count:
        raise RuntimeError(f"only {len(kept)} usable scenarios in {max_draws} draws")
    return kept, rejected
