"""Longitudinal vehicle platoon following a constant-speed leader.

Each follower is modelled in error coordinates relative to its reference
``(v_ref, s_0(k) - i*d)`` so the closed loop is a regulation problem. The
state order is ``(speed, position)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..graph import CouplingGraph
from ..model import BUDGET_CONSERVING, ConstraintTerm, CoupledConstraint, Scenario, SubsystemModel

MASS_NORMALIZED = "mass_normalized"
LITERAL_DRAG = "paper_literal"


class PlatoonError(ValueError):
    pass


@dataclass
class PlatoonConfig:
    followers: int = 3
    T: float = 0.1
    b: float = 3700.0
    c: float = 0.5
    mu: float = 0.01
    m: float = 1000.0
    g: float = 10.0
    v_lim: float = 25.0
    v_ref: float = 20.0
    d: float = 40.0
    spacing_min: float = 10.0
    u_max: float = 1.0
    v_min: float = 5.0
    v_max: float = 25.0
    Q: list = field(default_factory=lambda: [1.0, 0.5])
    R: float = 0.1
    steps: int = 200
    drag: str = MASS_NORMALIZED
    # initial error (speed, position) of every follower
    initial_error: list = field(default_factory=lambda: [[2.0, -10.0]] * 3)

    def violations(self):
        out = []
        for name in ("T", "b", "c", "mu", "m", "g", "v_lim", "v_ref", "d", "spacing_min",
                     "u_max", "R"):
            if getattr(self, name) <= 0:
                out.append(f"{name} must be positive")
        if self.followers < 1:
            out.append("need at least one follower")
        if not self.v_min < self.v_max:
            out.append("speed bounds out of order")
        if self.drag not in (MASS_NORMALIZED, LITERAL_DRAG):
            out.append(f"unknown drag model {self.drag!r}")
        if len(self.initial_error) != self.followers:
            out.append("initial_error needs one (speed, position) pair per follower")
        return out

    def to_dict(self):
        out = asdict(self)
        out["initial_error"] = [list(map(float, e)) for e in self.initial_error]
        return out


def c_app(cfg: PlatoonConfig):
    """Slope of the drag force linearized at the speed limit."""
    return 13.0 * cfg.c * cfg.v_lim / 8.0


def speed_coefficients(cfg: PlatoonConfig):
    """``(a_vv, gain, const)`` of ``v+ = a_vv v + gain u + const``."""
    ca = c_app(cfg)
    if cfg.drag == MASS_NORMALIZED:
        return 1.0 - cfg.T * ca / cfg.m, cfg.b * cfg.T / cfg.m, -cfg.T * cfg.mu * cfg.g
    # the printed update taken at face value: no mass normalization of drag/friction
    return 1.0 - cfg.T * ca, cfg.b * cfg.T / cfg.m, -cfg.mu * cfg.m * cfg.g


def reference_input(cfg: PlatoonConfig):
    """Input that holds ``v = v_ref`` in steady state."""
    a_vv, gain, const = speed_coefficients(cfg)
    return ((1.0 - a_vv) * cfg.v_ref - const) / gain


def absolute_model(cfg: PlatoonConfig):
    """``(A, B, w)`` of one vehicle in absolute coordinates ``(v, s)``."""
    a_vv, gain, const = speed_coefficients(cfg)
    A = np.array([[a_vv, 0.0], [cfg.T, 1.0]])
    B = np.array([[gain], [0.0]])
    return A, B, np.array([const, 0.0])


def leader_position(cfg: PlatoonConfig, k):
    return cfg.v_ref * cfg.T * k


def reference_state(cfg: PlatoonConfig, i, k):
    """Reference of follower ``i`` (1-based) at step ``k``."""
    return np.array([cfg.v_ref, leader_position(cfg, k) - i * cfg.d])


def to_absolute(cfg: PlatoonConfig, errors, k):
    return [np.asarray(e) + reference_state(cfg, i + 1, k) for i, e in enumerate(errors)]


def to_error(cfg: PlatoonConfig, states, k):
    return [np.asarray(x) - reference_state(cfg, i + 1, k) for i, x in enumerate(states)]


def build_platoon_scenario(cfg: PlatoonConfig, N=10, alpha=0.1, delta=0.5, gamma=None,
                           q_max=5, d_min=None, w=None, mode=BUDGET_CONSERVING,
                           weight_scheme="metropolis") -> Scenario:
    """Error-coordinate platoon scenario; agent ``i`` is follower ``i + 1``."""
    bad = cfg.violations()
    if bad:
        raise PlatoonError("; ".join(bad))
    A, B, _ = absolute_model(cfg)
    u_r = reference_input(cfg)
    agents = [SubsystemModel(A, B, np.diag(cfg.Q), [[cfg.R]], U=[cfg.u_max - u_r],
                             L=[-cfg.u_max - u_r])
              for _ in range(cfg.followers)]
    gap = cfg.d - cfg.spacing_min
    cons = []
    for i in range(cfg.followers):
        cons.append(CoupledConstraint(f"vmax_{i}", [ConstraintTerm(i, [1, 0], cfg.v_ref - cfg.v_max)]))
        cons.append(CoupledConstraint(f"vmin_{i}", [ConstraintTerm(i, [-1, 0], cfg.v_min - cfg.v_ref)]))
    # the leader tracks its reference exactly, so the first gap is a local row
    cons.append(CoupledConstraint("gap_0", [ConstraintTerm(0, [0, 1], -gap)]))
    for i in range(1, cfg.followers):
        cons.append(CoupledConstraint(f"gap_{i}", [ConstraintTerm(i - 1, [0, -1]),
                                                   ConstraintTerm(i, [0, 1])], budget=gap))
    return Scenario(CouplingGraph.chain(cfg.followers), agents, cons, horizon=N, alpha=alpha,
                    delta=delta, w=w, gamma=gamma, q_max=q_max, d_min=d_min, mode=mode,
                    weight_scheme=weight_scheme,
                    names=[f"vehicle_{i + 1}" for i in range(cfg.followers)],
                    meta={"u_r": u_r, "platoon": cfg.to_dict()})


def initial_errors(cfg: PlatoonConfig):
    return [np.asarray(e, dtype=float) for e in cfg.initial_error]
