"""
Dense primal-dual interior-point solver for small convex programs.

Solves

    min   0.5 y'Hy + f'y
    s.t.  F y = e
          G y <= h
          y'M_c y + a_c'y <= r_c      (M_c PSD)
          lb <= y <= ub

and returns the primal point together with Lagrange multipliers for every
constraint row. Multipliers follow the convention

    L = 0.5 y'Hy + f'y + mu'(Fy - e) + sum_j lam_j g_j(y),   lam_j >= 0,

where every inequality is written as g_j(y) <= 0.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import warnings

import numpy as np
import scipy.linalg as sla

PSD_TOL = 1e-10


class SolverStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"


class ProgramError(ValueError):
    """Raised for malformed programs (bad shapes, non-PSD matrices)."""


@dataclass
class QuadraticConstraint:
    """``y'My + a'y <= r`` with ``M`` symmetric positive semidefinite."""

    M: np.ndarray
    a: np.ndarray
    r: float

    def value(self, y):
        return float(y @ self.M @ y + self.a @ y - self.r)

    def gradient(self, y):
        return 2.0 * self.M @ y + self.a


def _as_matrix(A, n, name):
    if A is None:
        return np.zeros((0, n))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != n:
        raise ProgramError(f"{name} has {A.shape[1]} columns, expected {n}")
    return A


def _as_vector(v, m, name):
    if v is None:
        return np.zeros(m)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != m:
        raise ProgramError(f"{name} has length {v.shape[0]}, expected {m}")
    return v


def _check_psd(M, name):
    if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max(initial=0.0))):
        raise ProgramError(f"{name} is not symmetric")
    if M.size and np.linalg.eigvalsh(M).min() < -PSD_TOL * max(1.0, np.abs(M).max()):
        raise ProgramError(f"{name} is not positive semidefinite")


@dataclass
class ConvexProgram:
    """Quadratic objective with linear, box and convex quadratic constraints."""

    H: np.ndarray
    f: np.ndarray | None = None
    F: np.ndarray | None = None
    e: np.ndarray | None = None
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    quad: list[QuadraticConstraint] = field(default_factory=list)
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = H.shape[0]
        if H.shape != (n, n):
            raise ProgramError(f"H must be square, got {H.shape}")
        self.H = 0.5 * (H + H.T)
        self.f = _as_vector(self.f, n, "f")
        self.F = _as_matrix(self.F, n, "F")
        self.e = _as_vector(self.e, self.F.shape[0], "e")
        self.G = _as_matrix(self.G, n, "G")
        self.h = _as_vector(self.h, self.G.shape[0], "h")
        lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, float).reshape(-1)
        ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float).reshape(-1)
        if lb.shape != (n,) or ub.shape != (n,):
            raise ProgramError("bounds must have one entry per variable")
        self.lb, self.ub = lb, ub
        quad = []
        for c, qc in enumerate(self.quad):
            M = np.atleast_2d(np.asarray(qc.M, dtype=float))
            if M.shape != (n, n):
                raise ProgramError(f"quadratic constraint {c}: M has shape {M.shape}")
            a = _as_vector(qc.a, n, f"quadratic constraint {c}: a")
            quad.append(QuadraticConstraint(0.5 * (M + M.T), a, float(qc.r)))
        self.quad = quad
        self.validate()

    @property
    def n(self):
        return self.H.shape[0]

    def validate(self):
        _check_psd(self.H, "H")
        for c, qc in enumerate(self.quad):
            _check_psd(qc.M, f"quadratic constraint {c}")
        if np.any(self.lb > self.ub):
            raise ProgramError("lower bound exceeds upper bound")

    def objective(self, y):
        return float(0.5 * y @ self.H @ y + self.f @ y)

    # Every inequality is stacked as [G rows; -y_j >= ... lower; upper; quadratic].
    def _bound_rows(self):
        lo = np.flatnonzero(np.isfinite(self.lb))
        hi = np.flatnonzero(np.isfinite(self.ub))
        return lo, hi

    def linear_inequalities(self):
        lo, hi = self._bound_rows()
        n = self.n
        eye = np.eye(n)
        A = np.vstack([self.G, -eye[lo], eye[hi]])
        b = np.concatenate([self.h, -self.lb[lo], self.ub[hi]])
        return A, b

    def inequality_values(self, y):
        A, b = self.linear_inequalities()
        q = np.array([qc.value(y) for qc in self.quad])
        return np.concatenate([A @ y - b, q])

    def inequality_jacobian(self, y):
        A, _ = self.linear_inequalities()
        if not self.quad:
            return A
        return np.vstack([A] + [qc.gradient(y)[None, :] for qc in self.quad])


@dataclass
class SolverSolution:
    status: SolverStatus
    y: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    lam_lb: np.ndarray
    lam_ub: np.ndarray
    lam_quad: np.ndarray
    stationarity: float
    feasibility: float
    complementarity: float
    objective: float
    iterations: int
    message: str = ""

    @property
    def optimal(self):
        return self.status == SolverStatus.OPTIMAL

    def stacked_multipliers(self, program):
        """Inequality multipliers in the program's internal row order."""
        lo, hi = program._bound_rows()
        return np.concatenate([self.lam, self.lam_lb[lo], self.lam_ub[hi], self.lam_quad])


def kkt_residuals(program: ConvexProgram, sol: SolverSolution):
    """Recompute (stationarity, feasibility, complementarity) from scratch.

    Uses only the program data and the primal/dual point in ``sol``; nothing
    from the solver's internal iterates.
    """
    y = np.asarray(sol.y, dtype=float)
    grad = program.H @ y + program.f
    if program.F.shape[0]:
        grad = grad + program.F.T @ sol.mu
    if program.G.shape[0]:
        grad = grad + program.G.T @ sol.lam
    grad = grad - sol.lam_lb + sol.lam_ub
    for lam_c, qc in zip(sol.lam_quad, program.quad):
        grad = grad + lam_c * qc.gradient(y)
    stationarity = float(np.abs(grad).max(initial=0.0))

    eq = np.abs(program.F @ y - program.e).max(initial=0.0)
    ineq_vals = []
    comp = []
    if program.G.shape[0]:
        g = program.G @ y - program.h
        ineq_vals.append(g)
        comp.append(sol.lam * g)
    lo = np.isfinite(program.lb)
    hi = np.isfinite(program.ub)
    g_lo = np.where(lo, program.lb - y, 0.0)
    g_hi = np.where(hi, y - program.ub, 0.0)
    ineq_vals += [g_lo, g_hi]
    comp += [sol.lam_lb * g_lo, sol.lam_ub * g_hi]
    if program.quad:
        gq = np.array([qc.value(y) for qc in program.quad])
        ineq_vals.append(gq)
        comp.append(sol.lam_quad * gq)
    viol = max((float(np.maximum(v, 0.0).max(initial=0.0)) for v in ineq_vals), default=0.0)
    feasibility = float(max(eq, viol))
    complementarity = float(max((np.abs(c).max(initial=0.0) for c in comp), default=0.0))
    return stationarity, feasibility, complementarity


def _data_scale(program):
    parts = [1.0, np.abs(program.f).max(initial=0.0), np.abs(program.e).max(initial=0.0)]
    finite_h = program.h[np.isfinite(program.h)]
    parts.append(np.abs(finite_h).max(initial=0.0))
    parts.extend(abs(qc.r) for qc in program.quad)
    return float(max(parts))


def _unpack(program, y, mu, lam_all, status, iterations, message=""):
    m_g = program.G.shape[0]
    lo, hi = program._bound_rows()
    n = program.n
    lam = lam_all[:m_g]
    lam_lb = np.zeros(n)
    lam_lb[lo] = lam_all[m_g:m_g + lo.size]
    lam_ub = np.zeros(n)
    lam_ub[hi] = lam_all[m_g + lo.size:m_g + lo.size + hi.size]
    lam_quad = lam_all[m_g + lo.size + hi.size:]
    sol = SolverSolution(status, y, mu, lam, lam_lb, lam_ub, lam_quad,
                         0.0, 0.0, 0.0, program.objective(y), iterations, message)
    sol.stationarity, sol.feasibility, sol.complementarity = kkt_residuals(program, sol)
    return sol


def _initial_point(program, y0):
    if y0 is not None:
        return np.asarray(y0, dtype=float).copy()
    y = np.zeros(program.n)
    if program.F.shape[0]:
        y = np.linalg.lstsq(program.F, program.e, rcond=None)[0]
    lb, ub = program.lb, program.ub
    width = np.where(np.isfinite(ub - lb), ub - lb, 2.0)
    margin = 0.1 * np.minimum(width, 1.0)
    return np.clip(y, lb + margin, ub - margin)


def _max_step(v, dv, frac):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, frac * np.min(-v[neg] / dv[neg])))


def _ipm(program, tol_abs, max_iter, y0, scale):
    """Mehrotra predictor-corrector on the slack formulation g(y) + s = 0.

    Stops once all three true KKT residuals are at most ``tol_abs``.
    """
    n = program.n
    A, b = program.linear_inequalities()
    quad = program.quad
    F, e = program.F, program.e
    p = F.shape[0]
    H, f = program.H, program.f
    m_lin = A.shape[0]
    m = m_lin + len(quad)

    y = _initial_point(program, y0)
    mu = np.zeros(p)
    if m == 0:
        # Pure equality-constrained QP: one KKT solve.
        K = np.block([[H, F.T], [F, np.zeros((p, p))]])
        rhs = np.concatenate([-f, e])
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        return sol[:n], sol[n:], np.zeros(0), 1, True, "equality-constrained QP"

    def g_of(y):
        lin = A @ y - b
        if not quad:
            return lin
        return np.concatenate([lin, [qc.value(y) for qc in quad]])

    def jac_of(y):
        if not quad:
            return A
        return np.vstack([A] + [qc.gradient(y)[None, :] for qc in quad])

    g = g_of(y)
    s = np.maximum(-g, 1.0)
    lam = np.ones(m)

    stall = 0
    best_feas = np.inf
    history = []
    reg = 1e-11 * max(1.0, np.abs(H).max(initial=0.0))
    for it in range(1, max_iter + 1):
        J = jac_of(y)
        r_d = H @ y + f + J.T @ lam
        if p:
            r_d = r_d + F.T @ mu
        r_e = F @ y - e
        r_i = g + s
        tau = float(s @ lam) / m

        # Convergence is judged on the true residuals at (y, lam).
        viol = max(float(np.maximum(g, 0).max(initial=0.0)), float(np.abs(r_e).max(initial=0.0)))
        stat = float(np.abs(r_d).max())
        comp = float(np.abs(lam * g).max())
        if stat <= tol_abs and viol <= tol_abs and comp <= tol_abs:
            return y, mu, lam, it, True, "converged"

        primal_res = max(float(np.abs(r_i).max()), float(np.abs(r_e).max(initial=0.0)))
        history.append(primal_res)
        if primal_res < 0.5 * best_feas:
            best_feas = primal_res
            stall = 0
        else:
            stall += 1
        if stall >= 10 and primal_res > tol_abs and tau < 1e-10 * scale:
            return y, mu, lam, it, False, "primal residual stalled"
        if np.abs(lam).max() > 1e12 * scale:
            return y, mu, lam, it, False, "multipliers diverged"

        W = H.copy()
        for lam_c, qc in zip(lam[m_lin:], quad):
            W += 2.0 * lam_c * qc.M
        D = lam / s
        K = W + (J.T * D) @ J + reg * np.eye(n)
        KKT = np.block([[K, F.T], [F, -reg * np.eye(p)]]) if p else K
        try:
            with warnings.catch_warnings():
                # an exact zero pivot only warns; treat it like a failed factorization
                warnings.simplefilter("error", sla.LinAlgWarning)
                lu = sla.lu_factor(KKT, check_finite=False)
        except (ValueError, np.linalg.LinAlgError, sla.LinAlgWarning):
            return y, mu, lam, it, False, "singular KKT system"

        def direction(r_c):
            rhs_y = -r_d + J.T @ ((r_c - lam * r_i) / s)
            rhs = np.concatenate([rhs_y, -r_e]) if p else rhs_y
            sol = sla.lu_solve(lu, rhs, check_finite=False)
            dy = sol[:n]
            dmu = sol[n:]
            ds = -r_i - J @ dy
            dlam = (-r_c - lam * ds) / s
            return dy, dmu, ds, dlam

        # predictor
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            dy, dmu, ds, dlam = direction(s * lam)
            if not np.all(np.isfinite(dy)):
                return y, mu, lam, it, False, "non-finite search direction"
            a_aff = min(_max_step(s, ds, 1.0), _max_step(lam, dlam, 1.0))
            tau_aff = float((s + a_aff * ds) @ (lam + a_aff * dlam)) / m
            sigma = min(1.0, (tau_aff / tau) ** 3) if tau > 0 else 0.0
            # corrector
            r_c = s * lam + ds * dlam - sigma * tau
            dy, dmu, ds, dlam = direction(r_c)
            frac = 0.995 if tau > 1e-6 else 0.9999
            alpha = min(_max_step(s, ds, frac), _max_step(lam, dlam, frac))
        if not np.isfinite(alpha) or not np.all(np.isfinite(dy)):
            return y, mu, lam, it, False, "non-finite search direction"

        y = y + alpha * dy
        mu = mu + alpha * dmu
        s = s + alpha * ds
        lam = lam + alpha * dlam
        g = g_of(y)
    return y, mu, lam, max_iter, False, "iteration limit"


def _phase_one(program, tol, max_iter, y0, scale):
    """Minimise the largest inequality violation subject to the equalities.

    Returns the optimal violation level ``t*``, its message and the point
    reached; ``t* > 0`` certifies infeasibility of the original program.
    """
    n = program.n
    if program.F.shape[0]:
        y_ls = np.linalg.lstsq(program.F, program.e, rcond=None)[0]
        if np.abs(program.F @ y_ls - program.e).max() > 1e-8 * scale:
            return np.inf, "inconsistent equality constraints"
    A, b = program.linear_inequalities()
    G1 = np.hstack([A, -np.ones((A.shape[0], 1))])
    quad = [QuadraticConstraint(np.pad(qc.M, ((0, 1), (0, 1))),
                                np.append(qc.a, -1.0), qc.r) for qc in program.quad]
    H1 = np.zeros((n + 1, n + 1))
    f1 = np.zeros(n + 1)
    f1[-1] = 1.0
    lb1 = np.full(n + 1, -np.inf)
    lb1[-1] = -1.0
    aux = ConvexProgram(H1, f1, np.hstack([program.F, np.zeros((program.F.shape[0], 1))]),
                        program.e, G1, b, quad, lb1, None)
    y = _initial_point(program, y0)
    t0 = float(np.max(program.inequality_values(y), initial=0.0)) + 1.0
    y, _, _, _, ok, msg = _ipm(aux, max(tol, 1e-10) * scale, max_iter, np.append(y, t0), scale)
    return float(y[-1]), msg, y[:-1]


def solve(program: ConvexProgram, tol: float = 1e-8, max_iter: int = 100, y0=None,
          relative: bool = False) -> SolverSolution:
    """Solve ``program`` with a primal-dual interior-point method.

    Parameters
    ----------
    program : ConvexProgram
        Validated program; PSD checks already ran in its constructor.
    tol : float
        Bound on the stationarity, feasibility and complementarity residuals.
    relative : bool
        Multiply ``tol`` by ``max(1, |f|, |e|, |h|, |r|)``; for programs whose
        data is large (e.g. heavy penalty terms) an absolute bound can sit
        below what double precision resolves.
    max_iter : int
        Iteration cap of the main loop.
    y0 : ndarray, optional
        Initial primal point hint.

    Returns
    -------
    SolverSolution
        ``Optimal`` with primal/dual point, or ``Infeasible`` with the
        phase-one violation level in ``message``, or ``MaxIterations``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    program.validate()
    scale = _data_scale(program)
    tol_abs = tol * scale if relative else tol
    y, mu, lam, it, ok, msg = _ipm(program, tol_abs, max_iter, y0, scale)
    if ok:
        return _unpack(program, y, mu, lam, SolverStatus.OPTIMAL, it, msg)
    t_star, p1_msg, y_p1 = _phase_one(program, tol, max_iter, y0, scale)
    if t_star > max(1e3 * tol, 1e-7) * scale:
        return _unpack(program, y, mu, lam, SolverStatus.INFEASIBLE, it,
                       f"{msg}; minimal max-violation {t_star:.3e} ({p1_msg})")
    if t_star < 0:
        # strictly feasible point found: restart from it
        y2, mu2, lam2, it2, ok, msg2 = _ipm(program, tol_abs, max_iter, y_p1, scale)
        if ok:
            return _unpack(program, y2, mu2, lam2, SolverStatus.OPTIMAL, it + it2, msg2)
    return _unpack(program, y, mu, lam, SolverStatus.MAX_ITERATIONS, it,
                   f"{msg}; phase one violation {t_star:.3e}")
