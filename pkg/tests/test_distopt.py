import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vfdmpc.assembly import assemble_step
from vfdmpc.bench.platoon import PlatoonConfig, build_platoon_scenario, initial_errors
from vfdmpc.bench.synthetic import sample_scenarios
from vfdmpc.distopt import (BUDGET_CONSERVING, GRADIENT, PAPER_LITERAL, LocalInfeasible,
                            MessageLog, RowState, build_local_problem, compute_gap,
                            evaluate_phi, init_consensus, project_z, recenter,
                            redistribute_budget, run_distributed, shift_consensus,
                            z_gradient)
from vfdmpc.graph import CouplingGraph
from vfdmpc.model import ConstraintTerm, CoupledConstraint, Scenario, SubsystemModel
from vfdmpc.oracle import gap_report, solve_centralized
from vfdmpc.solver import SolverStatus, solve


def row(n=2, d=2.0, delta=1.0, P=None):
    P = np.full((n, n), 1.0 / n) if P is None else np.asarray(P)
    return RowState("s", tuple(range(n)), P, d, delta, np.zeros(n), np.full(n, d / n),
                    np.zeros(n))


def double_integrator(T=0.5, U=5.0):
    return SubsystemModel([[1, T], [0, 1]], [[0], [T]], np.eye(2), [[0.1]], U=[U], L=[-U])


def toy(budget=0.3, N=5, alpha=0.1, **kw):
    # two agents share a bound on the sum of their (negated) velocities
    cons = [CoupledConstraint("s", [ConstraintTerm(0, [0, -1]), ConstraintTerm(1, [0, -1])],
                              budget=budget)]
    return Scenario(CouplingGraph.complete(2), [double_integrator(), double_integrator()], cons,
                    horizon=N, alpha=alpha, weight_scheme="uniform", **kw)


TOY_X0 = [np.array([1.0, 0.0]), np.array([2.0, 0.0])]


def test_redistribution_equal_gaps_keep_shares():
    rs = row()
    redistribute_budget(rs, [0.3, 0.3])
    np.testing.assert_allclose(rs.shares, [1.0, 1.0])


def test_redistribution_example():
    rs = row()
    redistribute_budget(rs, [0.4, 0.0])
    np.testing.assert_allclose(rs.shares - 1.0, [-0.2, 0.2])


def test_redistribution_literal_mode_moves_budget():
    rs = row()
    redistribute_budget(rs, [0.4, 0.0], PAPER_LITERAL)
    np.testing.assert_allclose(rs.shift, [0.4, 0.0])
    np.testing.assert_allclose(rs.d, 2.4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=5))
def test_redistribution_conserves_budget(gaps):
    rs = row(n=len(gaps), d=3.0)
    redistribute_budget(rs, gaps, BUDGET_CONSERVING)
    np.testing.assert_allclose(rs.shares.sum(), 3.0, rtol=1e-12, atol=1e-12)


def test_gradient_vanishes_for_equal_multipliers():
    P = [[2 / 3, 1 / 3, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 3, 2 / 3]]
    rs = row(n=3, P=P)
    lam = {0: 1.7, 1: 1.7, 2: 1.7}
    for j in range(3):
        assert z_gradient(j, rs, lam) == pytest.approx(0.0, abs=1e-15)


def test_gradient_example():
    rs = row()
    lam = {0: 2.0, 1: 0.0}
    assert [z_gradient(j, rs, lam) for j in (0, 1)] == pytest.approx([1.0, -1.0])


def test_gradient_missing_neighbor():
    with pytest.raises(KeyError, match="agent 1"):
        z_gradient(0, row(), {0: 1.0})


def test_projection_examples():
    rs = row(d=2.0, delta=1.0)
    assert rs.half_width == 0.5
    np.testing.assert_allclose(project_z(np.array([0.2, -0.4]), rs), [0.2, -0.4])
    np.testing.assert_allclose(project_z(np.array([10.0, -10.0]), rs), [0.5, -0.5])


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 4))
def test_projection_is_nearest_box_point(value, d):
    rs = row(d=d, delta=0.5)
    grid = np.linspace(-rs.half_width, rs.half_width, 2001)
    best = grid[np.argmin(np.abs(grid - value))]
    got = project_z(np.array([value, 0.0]), rs)[0]
    assert abs(got - value) <= abs(best - value) + 1e-12
    assert abs(got) <= rs.half_width


def test_recenter_keeps_tightened_rhs():
    rs = row(n=3, d=3.0, delta=0.4, P=[[2 / 3, 1 / 3, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 3, 2 / 3]])
    rs.z = np.array([0.1, -0.05, 0.02])
    before = (1 - rs.delta) * rs.shares - rs.coupling()
    recenter(rs)
    np.testing.assert_allclose((1 - rs.delta) * rs.shares - rs.coupling(), before)
    np.testing.assert_allclose(rs.shares.sum(), 3.0)
    assert not rs.z.any()


def test_local_rows_without_slack_offsets():
    sc = toy(delta=1.0)
    step = assemble_step(sc, TOY_X0)
    state = init_consensus(step, sc)
    lp = build_local_problem(0, step, state, w=10.0)
    rs = state.rows["s@2"]
    term = step.row("s@2").terms[0]
    # c_i(y) - rho d/n <= (1 - delta) b_i = 0
    assert lp.rhs["s@2"] == pytest.approx(-term.const)
    pos = lp.affine_pos["s@2"]
    assert lp.program.G[pos, lp.rho_col["s@2"]] == pytest.approx(-rs.d / 2)


def test_opposite_offsets_shift_rows_oppositely():
    sc = toy()
    step = assemble_step(sc, TOY_X0)
    state = init_consensus(step, sc)
    base = [build_local_problem(i, step, state, 10.0).rhs["s@1"] for i in (0, 1)]
    a = 0.5 * state.rows["s@1"].half_width
    state.rows["s@1"].z = np.array([a, -a])
    moved = [build_local_problem(i, step, state, 10.0).rhs["s@1"] for i in (0, 1)]
    np.testing.assert_allclose(np.subtract(moved, base), [-a, a])


def test_missing_neighbor_value_named():
    sc = toy()
    step = assemble_step(sc, TOY_X0)
    state = init_consensus(step, sc)
    with pytest.raises(KeyError, match="s@0.*agent 1"):
        build_local_problem(0, step, state, 10.0, neighbor_z={("s@0", 0): 0.0})


def test_platoon_local_programs_solve():
    cfg = PlatoonConfig()
    sc = build_platoon_scenario(cfg, N=10, alpha=0.1)
    step = assemble_step(sc, initial_errors(cfg))
    state = init_consensus(step, sc)
    for i in range(3):
        lp = build_local_problem(i, step, state, 1e4)
        assert solve(lp.program, tol=1e-10, relative=True).status == SolverStatus.OPTIMAL


def test_gap_examples():
    sc = toy()
    step = assemble_step(sc, TOY_X0)
    state = init_consensus(step, sc)
    lp = build_local_problem(0, step, state, 10.0)
    sol = solve(lp.program, tol=1e-10, relative=True)
    y = sol.y.copy()
    term = step.row("s@1").terms[0]
    lay = step.agents[0].layout
    vel = lay.x(1).start + 1
    assert term.a[vel] == -1.0
    y[lp.rho_col["s@1"]] = 0.0
    # move the stage-1 velocity onto the right-hand side, then 0.3 inside
    y[vel] -= compute_gap(lp, "s@1", y)
    assert compute_gap(lp, "s@1", y) == pytest.approx(0.0, abs=1e-12)
    y[vel] += 0.3
    assert compute_gap(lp, "s@1", y) == pytest.approx(0.3)


def test_platoon_first_iteration_gaps_nonnegative():
    cfg = PlatoonConfig()
    sc = build_platoon_scenario(cfg, N=10, alpha=0.1)
    res = run_distributed(sc, assemble_step(sc, initial_errors(cfg)), q_max=1)
    for gaps in res.diagnostics[0].gaps.values():
        assert gaps.min() >= -1e-8


def test_single_agent_is_one_local_solve():
    a = double_integrator()
    sc = Scenario(CouplingGraph(1), [a], [], horizon=4, alpha=0.2)
    step = assemble_step(sc, [np.array([1.0, 0.0])])
    res = run_distributed(sc, step, q_max=4)
    phis = [d.phi_total for d in res.diagnostics]
    np.testing.assert_allclose(phis, phis[0], rtol=1e-9)
    central = solve_centralized(sc, [np.array([1.0, 0.0])], step=step)
    np.testing.assert_allclose(res.objective, central.objective, rtol=1e-7)


def test_toy_reaches_centralized_optimum():
    sc = toy(delta=0.1, gamma=0.05)
    step = assemble_step(sc, TOY_X0)
    central = solve_centralized(sc, TOY_X0, step=step)
    assert max(step.coupling_residuals(central.ys).values()) > -1e-7  # coupling is active
    res = run_distributed(sc, step, q_max=50, recentre=True)
    gap = gap_report(res.objective, central.objective)
    assert -1e-8 <= gap <= 0.02


def test_toy_iterates_violation_free_and_monotone():
    sc = toy()
    res = run_distributed(sc, assemble_step(sc, TOY_X0), q_max=15)
    phis = [d.phi_total for d in res.diagnostics]
    for d in res.diagnostics:
        assert d.max_residual <= 1e-8
    for a, b in zip(phis, phis[1:]):
        assert b <= a + 1e-7 * (1 + abs(a))
    assert not res.state.check()


def test_gradient_branch_taken_once_gaps_close():
    sc = toy(delta=0.1)
    res = run_distributed(sc, assemble_step(sc, TOY_X0), q_max=30)
    assert any(GRADIENT in d.branch.values() for d in res.diagnostics)


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 10_000))
def test_random_iterates_violation_free_and_monotone(seed):
    (_, sc, x0), = sample_scenarios(seed, 1, N=4, scale=0.5, q_max=8)[0]
    res = run_distributed(sc, assemble_step(sc, x0))
    phis = [d.phi_total for d in res.diagnostics]
    assert max(d.max_residual for d in res.diagnostics) <= 1e-8
    assert all(b <= a + 1e-7 * (1 + abs(a)) for a, b in zip(phis, phis[1:]))
    assert not res.state.check()


def test_infeasible_local_problem_reported():
    cfg = PlatoonConfig(initial_error=[[2.0, -10.0]] * 3)
    sc = build_platoon_scenario(cfg, N=5, alpha=0.7)
    with pytest.raises(LocalInfeasible) as info:
        run_distributed(sc, assemble_step(sc, initial_errors(cfg)))
    assert info.value.iteration == 1
    assert info.value.agent in (0, 1, 2)


def test_workers_give_identical_iterates():
    sc = toy()
    step = assemble_step(sc, TOY_X0)
    a = run_distributed(sc, step, q_max=6)
    b = run_distributed(sc, step, q_max=6, workers=2)
    for ya, yb in zip(a.ys, b.ys):
        np.testing.assert_array_equal(ya, yb)


def test_message_log_lines():
    sc = toy()
    sink = io.StringIO()
    log = MessageLog(sink)
    run_distributed(sc, assemble_step(sc, TOY_X0), q_max=2, log=log)
    lines = [json.loads(line) for line in sink.getvalue().splitlines()]
    assert lines == log.records
    assert {r["type"] for r in lines} == {"ZMsg", "LambdaMsg", "GapMsg"}
    assert set(lines[0]) == set(MessageLog.FIELDS)


def test_warm_start_shift():
    sc = toy()
    step = assemble_step(sc, TOY_X0)
    res = run_distributed(sc, step, q_max=6)
    nxt = assemble_step(sc, [np.array([0.95, -0.1]), np.array([1.9, -0.2])], k=1)
    warm = shift_consensus(res.state, nxt, sc)
    assert not warm.check()
    old, new = res.state.rows["s@2"], warm.rows["s@1"]
    np.testing.assert_allclose(new.shares - new.d / 2, old.shares - old.d / 2)


def strictly_complementary(state):
    # every coupled row clearly active or clearly slack, so a 1e-5 step keeps the active set
    for rs in state.rows.values():
        for lam, gap in zip(rs.lam, rs.gap):
            if not ((lam > 1e-4 and abs(gap) < 1e-5) or (lam < 1e-6 and gap > 1e-3)):
                return False
    return True


def test_gradient_matches_finite_differences():
    kept, _ = sample_scenarios(3, 40, N=4, scale=0.5, margin=(0.02, 0.2))
    checked = 0
    for _, sc, x0 in kept:
        step = assemble_step(sc, x0)
        state = init_consensus(step, sc)
        _, at, _ = evaluate_phi(sc, step, state)
        if not strictly_complementary(at):
            continue
        for rid, rs in at.rows.items():
            if rs.half_width <= 0 or rs.lam.max() < 1e-4:
                continue
            lam = dict(zip(rs.participants, rs.lam))
            for k, j in enumerate(rs.participants):
                vals = []
                for sgn in (1, -1):
                    s2 = state.copy()
                    s2.rows[rid].z[k] += sgn * 1e-5
                    vals.append(evaluate_phi(sc, step, s2)[0].sum())
                fd = (vals[0] - vals[1]) / 2e-5
                g = z_gradient(j, rs, lam)
                np.testing.assert_allclose(fd, g, rtol=1e-4)
            checked += 1
        if checked >= 10:
            break
    assert checked >= 10
