import numpy as np
import pytest

from vfdmpc import mpc
from vfdmpc.bench.platoon import PlatoonConfig, build_platoon_scenario, initial_errors
from vfdmpc.distopt import LocalInfeasible
from vfdmpc.model import evaluate_constraint, stage_cost
from vfdmpc.mpc import COMPLETED, INFEASIBLE, mpc_step, simulate
from vfdmpc.stability import check_lyapunov_decrease, lyapunov_tolerance

CFG = PlatoonConfig()


@pytest.fixture(scope="module")
def platoon():
    return build_platoon_scenario(CFG, N=10, alpha=0.1)


@pytest.fixture(scope="module")
def short_trace(platoon):
    return simulate(platoon, initial_errors(CFG), 25)


def test_zero_steps_gives_empty_completed_trace(platoon):
    tr = simulate(platoon, initial_errors(CFG), 0)
    assert tr.status == COMPLETED
    assert tr.steps == []
    assert tr.total_cost == 0.0


def test_origin_gives_zero_input_and_cost(platoon):
    out = mpc_step(platoon, [np.zeros(2)] * 3)
    for u in out.u:
        np.testing.assert_allclose(u, 0.0, atol=1e-7)
    assert out.J == pytest.approx(0.0, abs=1e-9)


def test_first_platoon_step_feasible(platoon):
    out = mpc_step(platoon, initial_errors(CFG))
    assert np.isfinite(out.J) and out.J > 0
    # J from the returned decisions equals a direct re-evaluation of the stage costs
    again = 0.0
    for a, p, y in zip(platoon.agents, out.step.agents, out.result.ys):
        xs, us = p.layout.states(y), p.layout.inputs(y)
        # the terminal pair is constrained by the RDP row but not priced
        again += sum(stage_cost(a, x, u) for x, u in zip(xs[:-1], us[:-1]))
    np.testing.assert_allclose(out.J, again, rtol=1e-12)
    # applied input is the first input slice of each decision vector
    for u, p, y in zip(out.u, out.step.agents, out.result.ys):
        np.testing.assert_array_equal(u, y[p.layout.u(0)])


def test_short_horizon_large_alpha_reports_infeasible():
    sc = build_platoon_scenario(CFG, N=5, alpha=0.5)
    tr = simulate(sc, initial_errors(CFG), 200)
    assert tr.status == INFEASIBLE
    assert tr.label.startswith("InfeasibleAtStep(")
    assert tr.failure


def test_trace_states_satisfy_constraints(platoon, short_trace):
    assert short_trace.completed and len(short_trace.steps) == 25
    for rec in short_trace.steps:
        states = dict(enumerate(rec.x))
        for con in platoon.constraints:
            assert evaluate_constraint(con, states) <= 1e-8
        for a, u in zip(platoon.agents, rec.u):
            assert np.all(u <= a.U + 1e-8) and np.all(u >= a.L - 1e-8)


def test_trace_lyapunov_decrease(short_trace):
    J, ell = short_trace.J, short_trace.stage_costs
    assert np.all(ell >= 0)
    for k in range(len(J) - 1):
        assert check_lyapunov_decrease(J[k], J[k + 1], ell[k], 0.1, lyapunov_tolerance(J[k]))


def test_simulation_is_deterministic(platoon, short_trace):
    again = simulate(platoon, initial_errors(CFG), 25)
    np.testing.assert_array_equal(again.J, short_trace.J)
    for a, b in zip(again.steps, short_trace.steps):
        np.testing.assert_array_equal(np.concatenate(a.u), np.concatenate(b.u))


def test_warm_start_failure_retried_cold(platoon, monkeypatch):
    real = mpc.run_distributed
    calls = []

    def flaky(scenario, step, state=None, **kw):
        calls.append(state is not None)
        if state is not None:
            raise LocalInfeasible(0, 1, "forced")
        return real(scenario, step, state, **kw)

    first = mpc_step(platoon, initial_errors(CFG))
    monkeypatch.setattr(mpc, "run_distributed", flaky)
    x1 = [a.A @ x + a.B @ u + a.w for a, x, u in zip(platoon.agents, initial_errors(CFG), first.u)]
    out = mpc_step(platoon, x1, first.state, k=1)
    assert out.warm_fallback
    assert calls == [True, False]
