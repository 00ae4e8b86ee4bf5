"""Distributed MPC without terminal ingredients, with violation-free consensus optimization."""

from .graph import CouplingGraph, build_weight_matrix, induce_subgraph, validate_doubly_stochastic
from .model import (BUDGET_CONSERVING, PAPER_LITERAL, ConstraintTerm, CoupledConstraint,
                    Scenario, SubsystemModel, evaluate_constraint, stage_cost, step_dynamics,
                    validate_scenario)
from .solver import ConvexProgram, SolverStatus, kkt_residuals, solve

__version__ = "0.1.0"

__all__ = [
    "CouplingGraph", "build_weight_matrix", "induce_subgraph", "validate_doubly_stochastic",
    "BUDGET_CONSERVING", "PAPER_LITERAL", "ConstraintTerm", "CoupledConstraint", "Scenario",
    "SubsystemModel", "evaluate_constraint", "stage_cost", "step_dynamics", "validate_scenario",
    "ConvexProgram", "SolverStatus", "kkt_residuals", "solve",
]
