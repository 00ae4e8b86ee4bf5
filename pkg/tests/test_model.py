import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vfdmpc.bench.platoon import PlatoonConfig, build_platoon_scenario, reference_input
from vfdmpc.graph import CouplingGraph
from vfdmpc.model import (ConstraintTerm, CoupledConstraint, ModelError, Scenario,
                          SubsystemModel, evaluate_constraint, stage_cost, step_dynamics,
                          validate_scenario)

finite = st.floats(-10, 10, allow_nan=False)


def agent(Q=np.eye(2), R=np.eye(1)):
    T = 0.1
    return SubsystemModel([[1, T], [0, 1]], [[0], [T]], Q, R, U=[1.0], L=[-1.0])


def test_stage_cost_origin():
    assert stage_cost(agent(), [0, 0], [0]) == 0.0


def test_stage_cost_example():
    a = agent(np.diag([1.0, 0.5]), [[0.1]])
    np.testing.assert_allclose(stage_cost(a, [1, 2], [3]), 3.9)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 2, elements=finite), arrays(float, 1, elements=finite))
def test_stage_cost_matches_double_loop(x, u):
    a = agent(np.array([[2.0, 0.3], [0.3, 1.0]]), [[0.7]])
    ref = sum(x[i] * a.Q[i, j] * x[j] for i in range(2) for j in range(2))
    ref += u[0] * a.R[0, 0] * u[0]
    np.testing.assert_allclose(stage_cost(a, x, u), ref, rtol=1e-12, atol=1e-12)


def test_stage_cost_dimension_mismatch():
    with pytest.raises(ModelError):
        stage_cost(agent(), [1, 2, 3], [0])


def test_identity_dynamics():
    a = SubsystemModel(np.eye(2), np.zeros((2, 1)), np.eye(2), np.eye(1), U=[1], L=[-1])
    np.testing.assert_allclose(step_dynamics(a, [1, 1], [0.3]), [1, 1])


def test_double_integrator_step():
    np.testing.assert_allclose(step_dynamics(agent(), [0, 1], [1]), [0.1, 1.1])


def test_platoon_steady_state_at_reference_input():
    cfg = PlatoonConfig()
    sc = build_platoon_scenario(cfg, N=5)
    a = sc.agents[0]
    # in error coordinates the reference input is the origin of the input
    np.testing.assert_allclose(step_dynamics(a, [0, 0], [0]), [0, 0], atol=1e-12)
    # and the absolute speed update is stationary at v_ref
    from vfdmpc.bench.platoon import speed_coefficients
    a_vv, gain, const = speed_coefficients(cfg)
    np.testing.assert_allclose(a_vv * cfg.v_ref + gain * reference_input(cfg) + const, cfg.v_ref)


def test_constraint_zero_points_give_minus_budget():
    c = CoupledConstraint("s", [ConstraintTerm(0, [1, 0]), ConstraintTerm(1, [0, 2])], budget=3.0)
    assert evaluate_constraint(c, {0: [0, 5], 1: [7, 0]}) == -3.0


def test_platoon_spacing_boundary():
    cfg = PlatoonConfig()
    sc = build_platoon_scenario(cfg, N=5)
    gap = next(c for c in sc.constraints if c.id == "gap_1")
    # reference spacing is 40 m; moving follower 2 up by 30 m leaves 10 m
    assert evaluate_constraint(gap, {0: [0, 0], 1: [0, 30]}) == 0.0


def test_missing_participant():
    c = CoupledConstraint("s", [ConstraintTerm(0, [1]), ConstraintTerm(1, [1])], budget=1)
    with pytest.raises(ModelError, match="participant 1"):
        evaluate_constraint(c, {0: [0.0]})


@settings(max_examples=50, deadline=None)
@given(arrays(float, 2, elements=finite), arrays(float, 2, elements=finite),
       st.floats(0, 5))
def test_constraint_residual_term_sum(x0, x1, b):
    M = np.array([[1.0, 0.2], [0.2, 0.5]])
    t0 = ConstraintTerm(0, [1.0, -2.0], 0.5)
    t1 = ConstraintTerm(1, [0.3, 0.1], -1.0, M)
    c = CoupledConstraint("s", [t1, t0], budget=b)
    ref = (x0[0] - 2 * x0[1] + 0.5) + (x1 @ M @ x1 + 0.3 * x1[0] + 0.1 * x1[1] - 1.0) - b
    np.testing.assert_allclose(evaluate_constraint(c, {0: x0, 1: x1}), ref, rtol=1e-12, atol=1e-9)


def test_duplicate_participant_rejected():
    with pytest.raises(ModelError):
        CoupledConstraint("s", [ConstraintTerm(0, [1]), ConstraintTerm(0, [2])])


def test_platoon_scenario_valid():
    assert validate_scenario(build_platoon_scenario(PlatoonConfig(), N=5)) == []


def small_scenario(**kw):
    agents = [agent(), agent()]
    cons = [CoupledConstraint("s", [ConstraintTerm(0, [1, 0]), ConstraintTerm(1, [1, 0])],
                              budget=1.0)]
    args = dict(horizon=3, alpha=0.5)
    args.update(kw)
    return Scenario(CouplingGraph.chain(2), agents, cons, **args)


def test_alpha_out_of_range():
    issues = validate_scenario(small_scenario(alpha=1.5))
    assert any("alpha" in m and "out of (0,1]" in m for m in issues)


def test_singular_q_reported():
    sc = small_scenario()
    sc.agents[1] = agent(Q=np.diag([1.0, 0.0]))
    assert any("Q not positive definite" in m for m in validate_scenario(sc))


def test_disconnected_participants_reported():
    agents = [agent(), agent(), agent()]
    cons = [CoupledConstraint("s", [ConstraintTerm(0, [1, 0]), ConstraintTerm(2, [1, 0])],
                              budget=1.0)]
    sc = Scenario(CouplingGraph.chain(3), agents, cons, horizon=3, alpha=0.5)
    assert any("connected" in m for m in validate_scenario(sc))


def test_unreachable_zero_point_reported():
    # the term is at least 1 everywhere, so it can never be brought to 0
    t = ConstraintTerm(0, [0, 0], 1.0, np.eye(2))
    cons = [CoupledConstraint("s", [t, ConstraintTerm(1, [1, 0])], budget=5.0)]
    sc = Scenario(CouplingGraph.chain(2), [agent(), agent()], cons, horizon=3, alpha=0.5)
    assert any(m.startswith("agent 0") for m in validate_scenario(sc))
