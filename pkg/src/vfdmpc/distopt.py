"""Violation-free distributed optimization with consensus slacks.

Every coupled row ``sum_i c_i(y_i) <= d`` is split into per-agent rows

    c_i(y_i) + z_i - sum_j p_ij z_j - rho_i d / n <= (1 - delta) b_i

where ``b_i`` are budget shares with ``sum_i b_i = d``, ``z`` lives in the box
``|z_i| <= delta d / (2 n)`` and ``0 <= rho_i <= delta`` is penalized by ``w``.
Summing the rows over agents gives ``sum_i c_i <= d`` whatever ``z`` and ``b``
are, so every iterate is feasible for the coupled problem.

Each outer iteration solves the local programs in parallel, then per coupled
row either moves unused budget between agents (when the gap vector is large)
or takes a projected gradient step on ``z`` using the local multipliers.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .assembly import StepProblem
from .graph import build_weight_matrix, induce_subgraph
from .model import BUDGET_CONSERVING, PAPER_LITERAL
from .solver import ConvexProgram, QuadraticConstraint, SolverStatus, solve

REDISTRIBUTE = "redistribute"
GRADIENT = "gradient"
MAX_BACKTRACKS = 40
LOOSEST_TOL = 1e-8


class DistoptError(RuntimeError):
    pass


class LocalInfeasible(DistoptError):
    """A tightened local program had no solution."""

    def __init__(self, agent, iteration, message, diagnostics=None):
        self.agent = agent
        self.iteration = iteration
        self.diagnostics = diagnostics
        super().__init__(f"agent {agent} infeasible at iteration {iteration}: {message}")


@dataclass
class RowState:
    """Consensus bookkeeping of one coupled row."""

    id: str
    participants: tuple
    P: np.ndarray
    d: float
    delta: float
    z: np.ndarray
    shares: np.ndarray
    shift: np.ndarray
    lam: np.ndarray = None
    rho: np.ndarray = None
    gap: np.ndarray = None

    @property
    def size(self):
        return len(self.participants)

    @property
    def half_width(self):
        return self.delta * max(self.d, 0.0) / (2 * self.size)

    def index(self, agent):
        return self.participants.index(agent)

    def coupling(self):
        """``t_i = z_i - sum_j p_ij z_j`` for every participant."""
        return self.z - self.P @ self.z


@dataclass
class ConsensusState:
    rows: dict
    mode: str = BUDGET_CONSERVING
    gamma: float | None = None
    q: int = 0

    def copy(self):
        rows = {}
        for k, r in self.rows.items():
            rows[k] = RowState(r.id, r.participants, r.P, r.d, r.delta, r.z.copy(),
                               r.shares.copy(), r.shift.copy(),
                               None if r.lam is None else r.lam.copy(),
                               None if r.rho is None else r.rho.copy(),
                               None if r.gap is None else r.gap.copy())
        return ConsensusState(rows, self.mode, self.gamma, self.q)

    def z_vector(self):
        return np.concatenate([r.z for r in self.rows.values()])

    def check(self, tol=1e-9):
        """Violated state invariants, empty when the state is consistent."""
        out = []
        for r in self.rows.values():
            if np.any(np.abs(r.z) > r.half_width + tol):
                out.append(f"{r.id}: z outside its box")
            if self.mode == BUDGET_CONSERVING and abs(r.shares.sum() - r.d) > tol * (1 + abs(r.d)):
                out.append(f"{r.id}: shares sum to {r.shares.sum()}, budget {r.d}")
            if r.rho is not None and (np.any(r.rho < -tol) or np.any(r.rho > r.delta + tol)):
                out.append(f"{r.id}: rho outside [0, delta]")
        return out


@dataclass
class LocalTightenedProblem:
    agent: int
    program: ConvexProgram
    n_y: int
    rows: list
    rho_col: dict
    affine_pos: dict
    quad_pos: dict
    rhs: dict
    terms: dict
    penalty: float

    def multipliers(self, sol):
        out = {}
        for rid in self.rows:
            if rid in self.affine_pos:
                out[rid] = float(sol.lam[self.affine_pos[rid]])
            else:
                out[rid] = float(sol.lam_quad[self.quad_pos[rid]])
        return out


@dataclass
class IterationDiagnostics:
    q: int
    phi: np.ndarray
    gaps: dict
    residuals: dict
    branch: dict
    messages: dict
    gamma: float | None
    J: float = float("nan")
    backtracks: int = 0
    wall_time: float = 0.0

    @property
    def phi_total(self):
        return float(np.sum(self.phi))

    @property
    def max_residual(self):
        return max(self.residuals.values()) if self.residuals else -np.inf


@dataclass
class DistributedResult:
    ys: list
    state: ConsensusState
    diagnostics: list
    step: StepProblem
    solutions: list = field(default_factory=list)

    @property
    def objective(self):
        return self.step.objective(self.ys)


class MessageLog:
    """Line-delimited JSON audit of simulated network traffic."""

    FIELDS = ("type", "k", "q", "s", "j", "value")

    def __init__(self, sink=None, keep=True):
        self.sink = sink
        self.keep = keep
        self.records = []

    def emit(self, kind, k, q, s, j, value):
        rec = dict(zip(self.FIELDS, (kind, k, q, s, int(j), float(value))))
        if self.keep:
            self.records.append(rec)
        if self.sink is not None:
            self.sink.write(json.dumps(rec) + "\n")


def default_penalty(step: StepProblem):
    return 1e4 * max(np.linalg.eigvalsh(p.H).max() for p in step.agents)


def default_gap_threshold(state: ConsensusState):
    return 1e-6 * max([1.0] + [abs(r.d) for r in state.rows.values()])


def default_step_size(state: ConsensusState):
    widths = [r.half_width for r in state.rows.values() if r.half_width > 0]
    return 0.05 * min(widths) if widths else 0.0


def init_consensus(step: StepProblem, scenario, mode=None) -> ConsensusState:
    """Cold start: ``z = 0`` and equal budget shares."""
    rows = {}
    for row in step.rows:
        n = len(row.participants)
        P = build_weight_matrix(induce_subgraph(scenario.graph, row.participants, row.id),
                                scenario.weight_scheme).P
        rows[row.id] = RowState(row.id, tuple(row.participants), P, row.budget,
                                scenario.delta_for(row.base), np.zeros(n),
                                np.full(n, row.budget / n), np.zeros(n))
    return ConsensusState(rows, mode or scenario.mode, scenario.gamma)


def shift_consensus(prev: ConsensusState, step: StepProblem, scenario) -> ConsensusState:
    """Warm start for the next MPC step from the previous step's consensus state.

    Values of stage ``j + 1`` move to stage ``j``; the last stage keeps its own.
    Share offsets from the equal split carry over and are re-centred on the new
    budget, ``z`` is clamped into the new box. The slack-sum row restarts from
    zero because its right-hand side is re-measured every step.
    """
    new = init_consensus(step, scenario, prev.mode)
    new.gamma = prev.gamma
    N = scenario.horizon
    for row in step.rows:
        if row.stage is None:
            continue
        src = f"{row.base}@{min(row.stage + 1, N - 1)}"
        old = prev.rows.get(src)
        if old is None or old.participants != new.rows[row.id].participants:
            continue
        r = new.rows[row.id]
        offsets = old.shares - old.d / old.size
        r.shares = r.d / r.size + offsets
        r.z = np.clip(old.z, -r.half_width, r.half_width)
    return new


def build_local_problem(agent, step: StepProblem, state: ConsensusState, w,
                        neighbor_z=None) -> LocalTightenedProblem:
    """Agent ``agent``'s tightened program over ``[y_i, rho_i]``.

    ``neighbor_z`` maps ``(row id, j)`` to ``z_j``; by default the values are
    read from ``state``. A missing value raises ``KeyError`` naming ``(s, j)``.
    """
    base = step.agents[agent]
    rows = [r for r in step.rows if agent in r.participants]
    n_y = base.layout.size
    n = n_y + len(rows)
    H = sla.block_diag(base.H, np.zeros((len(rows), len(rows))))
    f = np.zeros(n)
    f[n_y:] = w

    def pad(v):
        out = np.zeros(n)
        out[:n_y] = v
        return out

    def pad_matrix(M):
        out = np.zeros((n, n))
        out[:n_y, :n_y] = M
        return out

    F = np.hstack([base.F, np.zeros((base.F.shape[0], len(rows)))])
    lb = np.concatenate([base.lb, np.zeros(len(rows))])
    ub = np.concatenate([base.ub, np.zeros(len(rows))])
    G = [np.hstack([base.G, np.zeros((base.G.shape[0], len(rows)))])]
    h = [base.h]
    quad = [QuadraticConstraint(pad_matrix(q.M), pad(q.a), q.r) for q in base.quad]
    rho_col, affine_pos, quad_pos, rhs, terms = {}, {}, {}, {}, {}
    n_aff = base.G.shape[0]
    for idx, row in enumerate(rows):
        rs = state.rows[row.id]
        i = rs.index(agent)
        col = n_y + idx
        rho_col[row.id] = col
        ub[col] = rs.delta
        if neighbor_z is None:
            t = float(rs.coupling()[i])
        else:
            zs = []
            for j in rs.participants:
                if rs.P[i, rs.index(j)] == 0:
                    zs.append(0.0)
                    continue
                if (row.id, j) not in neighbor_z:
                    raise KeyError(f"missing z for constraint {row.id}, agent {j}")
                zs.append(neighbor_z[(row.id, j)])
            zs = np.asarray(zs)
            t = float(zs[i] - rs.P[i] @ zs)
        term = row.terms[agent]
        a = pad(term.a)
        a[col] = -rs.d / rs.size
        if state.mode == PAPER_LITERAL:
            r = (1 - rs.delta) * rs.d / rs.size - term.const - rs.shift[i] - t
        else:
            r = (1 - rs.delta) * rs.shares[i] - term.const - t
        rhs[row.id] = r
        terms[row.id] = (term, col, -rs.d / rs.size)
        if term.M is None:
            G.append(a[None, :])
            h.append([r])
            affine_pos[row.id] = n_aff
            n_aff += 1
        else:
            quad_pos[row.id] = len(quad)
            quad.append(QuadraticConstraint(pad_matrix(term.M), a, r))
    prog = ConvexProgram(H, f, F, base.e, np.vstack(G), np.concatenate(h), quad, lb, ub)
    return LocalTightenedProblem(agent, prog, n_y, [r.id for r in rows], rho_col,
                                 affine_pos, quad_pos, rhs, terms, w)


def compute_gap(local: LocalTightenedProblem, row_id, x):
    """Unused right-hand side of one tightened row at the local solution ``x``."""
    term, col, coef = local.terms[row_id]
    # the constant of the term is already folded into the stored right-hand side
    lhs = term(x[:local.n_y]) - term.const + coef * x[col]
    return local.rhs[row_id] - lhs


def redistribute_budget(rs: RowState, gaps, mode=BUDGET_CONSERVING):
    """Move unused budget between participants of one row (in place)."""
    gaps = np.asarray(gaps, dtype=float)
    if mode == PAPER_LITERAL:
        rs.shift = rs.shift + gaps
        rs.d = rs.d + float(gaps.sum())
    else:
        rs.shares = rs.shares - gaps + gaps.mean()
    return rs


def z_gradient(agent, rs: RowState, neighbor_lam):
    """Agent's component of ``(I - P)^T lambda``.

    ``neighbor_lam`` maps agent id to its multiplier on this row; only agents
    with ``p_ji > 0`` are read.
    """
    i = rs.index(agent)
    g = 0.0
    for j in rs.participants:
        p = rs.P[rs.index(j), i]
        if p == 0 and j != agent:
            continue
        if j not in neighbor_lam:
            raise KeyError(f"missing multiplier of agent {j} on constraint {rs.id}")
        g += ((1.0 if j == agent else 0.0) - p) * neighbor_lam[j]
    return g


def project_z(value, rs: RowState):
    return np.clip(value, -rs.half_width, rs.half_width)


def _solve_local(program, tol):
    """Solve to absolute ``tol``; when progress stalls, fall back to a relative ladder.

    The penalty weight inflates the data scale, so a relative tolerance alone
    would leave multipliers and gaps accurate only to about ``tol * w``.
    """
    sol = solve(program, tol=tol, max_iter=200)
    if sol.status == SolverStatus.OPTIMAL:
        return sol
    sol = solve(program, tol=tol, relative=True)
    while sol.status == SolverStatus.MAX_ITERATIONS and tol < LOOSEST_TOL:
        tol = min(tol * 100, LOOSEST_TOL)
        sol = solve(program, tol=tol, relative=True)
    return sol


def _solve_all(step, state, w, tol, pool):
    locs = [build_local_problem(i, step, state, w) for i in range(len(step.agents))]
    if pool is None:
        sols = [_solve_local(lp.program, tol) for lp in locs]
    else:
        sols = list(pool.map(lambda lp: _solve_local(lp.program, tol), locs))
    return locs, sols


def _record(step, state, locs, sols, q):
    for i, (lp, sol) in enumerate(zip(locs, sols)):
        if sol.status != SolverStatus.OPTIMAL:
            raise LocalInfeasible(i, q, sol.message)
    for rs in state.rows.values():
        rs.lam = np.zeros(rs.size)
        rs.rho = np.zeros(rs.size)
        rs.gap = np.zeros(rs.size)
    for lp, sol in zip(locs, sols):
        lam = lp.multipliers(sol)
        for rid in lp.rows:
            rs = state.rows[rid]
            i = rs.index(lp.agent)
            rs.lam[i] = lam[rid]
            rs.rho[i] = sol.y[lp.rho_col[rid]]
            rs.gap[i] = compute_gap(lp, rid, sol.y)
    ys = [sol.y[:lp.n_y] for lp, sol in zip(locs, sols)]
    phi = np.array([sol.objective for sol in sols])
    return ys, phi


def _messages(step, state, log, k, q):
    counts = {i: 0 for i in range(len(step.agents))}
    for rs in state.rows.values():
        for i, j in enumerate(rs.participants):
            fanout = int(np.count_nonzero(rs.P[:, i])) - 1
            if log is not None:
                log.emit("ZMsg", k, q, rs.id, j, rs.z[i])
                log.emit("LambdaMsg", k, q, rs.id, j, rs.lam[i])
                log.emit("GapMsg", k, q, rs.id, j, rs.gap[i])
            counts[j] += 3 * fanout
    return counts


def recenter(rs: RowState):
    """Fold the consensus offsets into the budget shares and reset ``z`` to 0.

    Every tightened right-hand side ``(1 - delta) b_i - t_i`` is unchanged and
    the shares keep their sum because the offsets ``t`` sum to zero.
    """
    if rs.delta < 1:
        rs.shares = rs.shares - rs.coupling() / (1 - rs.delta)
        rs.z = np.zeros_like(rs.z)
    return rs


def _update(state, d_min, gamma, recentre=False):
    """Apply one consensus update in place; returns the branch taken per row."""
    branch = {}
    for rs in state.rows.values():
        if np.linalg.norm(rs.gap) > d_min:
            redistribute_budget(rs, rs.gap, state.mode)
            branch[rs.id] = REDISTRIBUTE
        else:
            lam = dict(zip(rs.participants, rs.lam))
            grad = np.array([z_gradient(j, rs, lam) for j in rs.participants])
            rs.z = project_z(rs.z - gamma * grad, rs)
            if recentre and state.mode == BUDGET_CONSERVING:
                recenter(rs)
            branch[rs.id] = GRADIENT
    # shrinking budgets in the literal mode can leave z outside the box
    for rs in state.rows.values():
        rs.z = project_z(rs.z, rs)
    return branch


def run_distributed(scenario, step: StepProblem, state: ConsensusState | None = None,
                    q_max=None, tol=1e-10, workers=None, log: MessageLog | None = None,
                    backtrack=True, recentre=False) -> DistributedResult:
    """Run the outer consensus iterations on one assembled MPC step.

    Gradient steps that would increase the summed local objective are
    retried with half the step size (persistently), so the objective is
    nonincreasing across accepted iterations. Redistribution alone keeps the
    previous local solutions feasible and never needs a retry.
    """
    q_max = scenario.q_max if q_max is None else q_max
    state = init_consensus(step, scenario) if state is None else state.copy()
    w = scenario.w if scenario.w is not None else default_penalty(step)
    d_min = scenario.d_min if scenario.d_min is not None else default_gap_threshold(state)
    if state.gamma is None:
        state.gamma = default_step_size(state)
    pool = ThreadPoolExecutor(workers) if workers and workers > 1 else None
    diags = []
    try:
        t0 = time.perf_counter()
        locs, sols = _solve_all(step, state, w, tol, pool)
        ys, phi = _record(step, state, locs, sols, 1)
        for q in range(1, q_max + 1):
            state.q = q
            diag = IterationDiagnostics(q, phi, {r: s.gap.copy() for r, s in state.rows.items()},
                                        step.coupling_residuals(ys), {},
                                        _messages(step, state, log, step.k, q), state.gamma,
                                        step.objective(ys))
            diags.append(diag)
            if q == q_max:
                diag.wall_time = time.perf_counter() - t0
                break
            prev = state.copy()
            backtracks = 0
            while True:
                trial = prev.copy()
                branch = _update(trial, d_min, state.gamma, recentre)
                locs, sols = _solve_all(step, trial, w, tol, pool)
                try:
                    new_ys, new_phi = _record(step, trial, locs, sols, q + 1)
                except LocalInfeasible:
                    if not backtrack or GRADIENT not in branch.values() or backtracks >= MAX_BACKTRACKS:
                        raise
                    backtracks += 1
                    state.gamma *= 0.5
                    continue
                grew = new_phi.sum() > phi.sum() + 1e-8 * (1 + abs(phi.sum()))
                if (not backtrack or not grew or GRADIENT not in branch.values()
                        or backtracks >= MAX_BACKTRACKS):
                    break
                backtracks += 1
                state.gamma *= 0.5
            diag.branch = branch
            diag.backtracks = backtracks
            diag.wall_time = time.perf_counter() - t0
            t0 = time.perf_counter()
            trial.gamma = state.gamma
            state, ys, phi = trial, new_ys, new_phi
    except LocalInfeasible as exc:
        exc.diagnostics = diags
        raise
    finally:
        if pool is not None:
            pool.shutdown()
    return DistributedResult(ys, state, diags, step, sols)


def evaluate_phi(scenario, step: StepProblem, state: ConsensusState, tol=1e-10):
    """Local objectives and multipliers at fixed ``(z, shares)``; no update."""
    state = state.copy()
    w = scenario.w if scenario.w is not None else default_penalty(step)
    locs, sols = _solve_all(step, state, w, tol, None)
    ys, phi = _record(step, state, locs, sols, state.q)
    return phi, state, ys
