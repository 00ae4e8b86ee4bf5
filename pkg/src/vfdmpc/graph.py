"""Coupling topology and per-constraint doubly stochastic weight matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STOCHASTIC_TOL = 1e-12


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class CouplingGraph:
    """Undirected graph over agents ``0..node_count-1``.

    ``neighbors(i)`` always contains ``i`` itself.
    """

    node_count: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.node_count < 1:
            raise GraphError("node_count must be positive")
        norm = set()
        for i, j in self.edges:
            for v in (i, j):
                self._check_node(v)
            if i != j:
                norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def chain(cls, n):
        return cls(n, frozenset((i, i + 1) for i in range(n - 1)))

    @classmethod
    def complete(cls, n):
        return cls(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))

    def _check_node(self, v):
        if not isinstance(v, (int, np.integer)) or not 0 <= v < self.node_count:
            raise GraphError(f"invalid node id {v!r}")

    def has_edge(self, i, j):
        return i == j or (min(i, j), max(i, j)) in self.edges

    def neighbors(self, i):
        self._check_node(i)
        return sorted({i} | {b if a == i else a for a, b in self.edges if i in (a, b)})


@dataclass(frozen=True)
class ConstraintSubgraph:
    constraint_id: str
    participants: tuple
    edges: frozenset

    def __len__(self):
        return len(self.participants)

    def local_index(self, agent):
        return self.participants.index(agent)

    def neighbors(self, agent):
        """Subgraph neighbours of ``agent`` (including itself), in participant order."""
        return [j for j in self.participants
                if j == agent or (min(agent, j), max(agent, j)) in self.edges]

    def degree(self, agent):
        return len(self.neighbors(agent)) - 1

    def is_connected(self):
        seen = {self.participants[0]}
        stack = [self.participants[0]]
        while stack:
            v = stack.pop()
            for u in self.neighbors(v):
                if u not in seen:
                    seen.add(u)
                    stack.append(u)
        return len(seen) == len(self.participants)

    def is_complete(self):
        k = len(self.participants)
        return len(self.edges) == k * (k - 1) // 2


def induce_subgraph(graph: CouplingGraph, participants, s) -> ConstraintSubgraph:
    """Restrict ``graph`` to ``participants`` (kept in the given order)."""
    participants = tuple(participants)
    if not participants:
        raise GraphError(f"constraint {s}: empty participant set")
    for v in participants:
        try:
            graph._check_node(v)
        except GraphError:
            raise GraphError(f"constraint {s}: invalid node id {v!r}") from None
    if len(set(participants)) != len(participants):
        raise GraphError(f"constraint {s}: duplicate participants")
    members = set(participants)
    edges = frozenset(e for e in graph.edges if e[0] in members and e[1] in members)
    return ConstraintSubgraph(str(s), participants, edges)


@dataclass(frozen=True)
class WeightMatrix:
    constraint_id: str
    P: np.ndarray
    scheme: str

    def __post_init__(self):
        self.P.setflags(write=False)


def build_weight_matrix(sub: ConstraintSubgraph, scheme="metropolis") -> WeightMatrix:
    """Doubly stochastic weights supported exactly on the subgraph neighbourhoods.

    ``uniform`` needs a complete subgraph (every entry ``1/|N|``);
    ``metropolis`` works on any connected subgraph.
    """
    k = len(sub)
    if not sub.is_connected():
        raise GraphError(f"constraint {sub.constraint_id}: participants {sub.participants} "
                         "do not induce a connected subgraph")
    if scheme == "uniform":
        if not sub.is_complete():
            raise GraphError(f"constraint {sub.constraint_id}: uniform weights need a "
                             "complete subgraph")
        P = np.full((k, k), 1.0 / k)
    elif scheme == "metropolis":
        P = np.zeros((k, k))
        deg = [sub.degree(a) for a in sub.participants]
        for a, i in enumerate(sub.participants):
            for j in sub.neighbors(i):
                if j != i:
                    b = sub.local_index(j)
                    P[a, b] = 1.0 / (1.0 + max(deg[a], deg[b]))
            P[a, a] = 1.0 - P[a].sum()
    else:
        raise GraphError(f"unknown weighting scheme {scheme!r}")
    if np.any(P[np.eye(k, dtype=bool)] <= 0):
        raise GraphError(f"constraint {sub.constraint_id}: scheme {scheme} "
                         "produced a non-positive diagonal entry")
    W = WeightMatrix(sub.constraint_id, P, scheme)
    if not validate_doubly_stochastic(W, sub):
        raise GraphError(f"constraint {sub.constraint_id}: weights not doubly stochastic")
    return W


def validate_doubly_stochastic(W, sub: ConstraintSubgraph | None = None,
                               tol=STOCHASTIC_TOL) -> bool:
    """True iff rows and columns sum to one (and the support matches ``sub``)."""
    P = np.asarray(W.P if isinstance(W, WeightMatrix) else W, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        return False
    if np.any(P < 0):
        return False
    if np.abs(P.sum(axis=1) - 1).max() > tol or np.abs(P.sum(axis=0) - 1).max() > tol:
        return False
    if sub is not None:
        for a, i in enumerate(sub.participants):
            for b, j in enumerate(sub.participants):
                linked = i == j or (min(i, j), max(i, j)) in sub.edges
                if linked != (P[a, b] > 0):
                    return False
    return True
