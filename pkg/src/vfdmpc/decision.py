"""Index map of one agent's stacked decision vector.

``y = [x(k), ..., x(k+N), u(k), ..., u(k+N), v]``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AgentDecision:
    n: int
    m: int
    N: int

    @property
    def size(self):
        return (self.n + self.m) * (self.N + 1) + 1

    def x(self, j):
        return slice(j * self.n, (j + 1) * self.n)

    def u(self, j):
        base = self.n * (self.N + 1)
        return slice(base + j * self.m, base + (j + 1) * self.m)

    @property
    def v(self):
        return self.size - 1

    def select_x(self, j):
        E = np.zeros((self.n, self.size))
        E[:, self.x(j)] = np.eye(self.n)
        return E

    def select_u(self, j):
        E = np.zeros((self.m, self.size))
        E[:, self.u(j)] = np.eye(self.m)
        return E

    def states(self, y):
        return np.asarray(y)[: self.n * (self.N + 1)].reshape(self.N + 1, self.n)

    def inputs(self, y):
        base = self.n * (self.N + 1)
        return np.asarray(y)[base: base + self.m * (self.N + 1)].reshape(self.N + 1, self.m)

    def slack(self, y):
        return float(np.asarray(y)[self.v])
