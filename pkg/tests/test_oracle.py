import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vfdmpc.assembly import assemble_step
from vfdmpc.bench.platoon import PlatoonConfig, build_platoon_scenario, initial_errors
from vfdmpc.bench.synthetic import sample_scenarios
from vfdmpc.distopt import run_distributed
from vfdmpc.graph import CouplingGraph
from vfdmpc.model import (ConstraintTerm, CoupledConstraint, Scenario, SubsystemModel,
                          validate_scenario)
from vfdmpc.oracle import gap_report, solve_centralized


def integrator():
    return SubsystemModel([[1.0]], [[1.0]], [[1.0]], [[1.0]], U=[10.0], L=[-10.0])


def scalar_toy(**kw):
    # x_a + x_b >= 3 at every coupled stage
    cons = [CoupledConstraint("s", [ConstraintTerm(0, [-1.0], 1.5),
                                    ConstraintTerm(1, [-1.0], 1.5)])]
    return Scenario(CouplingGraph.complete(2), [integrator(), integrator()], cons, horizon=2,
                    alpha=0.1, weight_scheme="uniform", **kw)


X0 = [np.array([2.0]), np.array([2.0])]


def test_origin_has_zero_optimum():
    sc = build_platoon_scenario(PlatoonConfig(), N=5, alpha=0.1)
    sol = solve_centralized(sc, [np.zeros(2)] * 3)
    assert sol.optimal
    assert sol.objective == pytest.approx(0.0, abs=1e-9)


def test_scalar_toy_is_valid():
    assert validate_scenario(scalar_toy()) == []


def test_scalar_toy_matches_kkt_solution():
    # stationarity 2(x0 + u) + 2u - lam = 0 per agent and x_a(1) + x_b(1) = 3 give
    # lam = 2, u(0) = -0.5, x(1) = 1.5, u(1) = 0, J* = 2 * (4 + 2.25 + 0.25) = 13
    sc = scalar_toy()
    sol = solve_centralized(sc, X0)
    assert sol.optimal
    np.testing.assert_allclose(sol.objective, 13.0, rtol=1e-8)
    step = assemble_step(sc, X0)
    for p, y in zip(step.agents, sol.ys):
        np.testing.assert_allclose(p.layout.states(y)[:2].ravel(), [2.0, 1.5], atol=1e-7)
        np.testing.assert_allclose(p.layout.inputs(y)[:2].ravel(), [-0.5, 0.0], atol=1e-7)


def test_scalar_toy_distributed_gap():
    sc = scalar_toy(delta=0.02)
    step = assemble_step(sc, X0)
    central = solve_centralized(sc, X0, step=step)
    res = run_distributed(sc, step, q_max=200)
    gaps = [gap_report(d.J, central.objective) for d in res.diagnostics]
    assert min(gaps) >= -1e-8
    assert gaps[-1] <= 0.01


def test_gap_report_examples():
    assert gap_report(7.5, 7.5) == 0.0
    assert gap_report(102.0, 100.0) == pytest.approx(0.02)
    # small optima are compared in absolute terms
    assert gap_report(0.3, 0.1) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        gap_report(1.0, np.inf)
    with pytest.raises(ValueError):
        gap_report(1.0, np.nan)


def test_platoon_optimum_below_distributed():
    cfg = PlatoonConfig()
    sc = build_platoon_scenario(cfg, N=10, alpha=0.1)
    x0 = initial_errors(cfg)
    step = assemble_step(sc, x0)
    central = solve_centralized(sc, x0, step=step)
    assert central.optimal
    res = run_distributed(sc, step, q_max=5)
    for d in res.diagnostics:
        assert central.objective <= d.J + 1e-8 * max(1.0, abs(central.objective))


def test_central_solution_satisfies_all_rows():
    cfg = PlatoonConfig()
    sc = build_platoon_scenario(cfg, N=8, alpha=0.3)
    step = assemble_step(sc, initial_errors(cfg))
    sol = solve_centralized(sc, initial_errors(cfg), step=step)
    assert max(step.coupling_residuals(sol.ys).values()) <= 1e-8
    for p, y in zip(step.agents, sol.ys):
        np.testing.assert_allclose(p.F @ y, p.e, atol=1e-8)
        assert np.all(y >= p.lb - 1e-8) and np.all(y <= p.ub + 1e-8)


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10_000))
def test_distributed_iterates_feasible_for_central_problem(seed):
    # any distributed iterate is feasible for the centralized problem, so J* never exceeds it
    (_, sc, x0), = sample_scenarios(seed, 1, N=4, scale=0.5, q_max=6)[0]
    step = assemble_step(sc, x0)
    central = solve_centralized(sc, x0, step=step)
    res = run_distributed(sc, step)
    assert max(step.coupling_residuals(res.ys).values()) <= 1e-8
    for d in res.diagnostics:
        assert d.max_residual <= 1e-8
        assert gap_report(d.J, central.objective) >= -1e-8
