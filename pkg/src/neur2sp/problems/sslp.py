"""Stochastic server location.

Servers are placed in the first stage at a cost; in each scenario a random
subset of clients shows up and every active client must be assigned to one
server, earning a revenue.  Server capacity can be exceeded through a
continuous overflow charged at a prohibitive rate, giving relatively
complete recourse.  Scenario vectors are binary (client active or not).

Instances are generated, not read from benchmark archives, so the
distributional constants below are reference-style defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..milp import BINARY, CONTINUOUS, MipModel
from . import TwoStageProblem


@dataclass
class SslpInstance(TwoStageProblem):
    n_servers: int
    m_clients: int
    server_cost: np.ndarray  # (n,)
    revenue: np.ndarray  # (m, n), also the capacity use of client i on server j
    capacity: float
    overflow_cost: float
    activation_prob: float = 0.5
    seed: int = 0
    name: str = field(default="sslp", init=False)

    def __post_init__(self):
        self.server_cost = np.asarray(self.server_cost, dtype=float)
        self.revenue = np.asarray(self.revenue, dtype=float)
        if self.revenue.shape != (self.m_clients, self.n_servers):
            raise ValueError("revenue matrix must be clients x servers")
        if self.capacity <= 0 or self.overflow_cost <= 0:
            raise ValueError("capacity and overflow cost must be positive")

    @property
    def problem_id(self) -> str:
        return f"SSLP_{self.n_servers}_{self.m_clients}"

    @property
    def n_first_stage(self) -> int:
        return self.n_servers

    @property
    def first_stage_cost(self) -> np.ndarray:
        return self.server_cost

    @property
    def first_stage_kinds(self) -> list[str]:
        return [BINARY] * self.n_servers

    @property
    def first_stage_bounds(self) -> list[tuple[float, float]]:
        return [(0.0, 1.0)] * self.n_servers

    @property
    def scenario_dim(self) -> int:
        return self.m_clients

    def add_first_stage(self, model: MipModel) -> list[int]:
        handles = [model.add_binary(f"srv_{j}") for j in range(self.n_servers)]
        model.add_objective_terms({h: c for h, c in zip(handles, self.server_cost)})
        return handles

    def add_second_stage(self, model: MipModel, x, xi: np.ndarray,
                         weight: float, tag: str = "s") -> None:
        n, m = self.n_servers, self.m_clients
        active = np.asarray(xi, dtype=float)
        fixed_x = isinstance(x, np.ndarray)
        serve = [[model.add_binary(f"{tag}_y_{i}_{j}") for j in range(n)]
                 for i in range(m)]
        overflow = [model.add_variable(f"{tag}_o_{j}", CONTINUOUS, 0.0)
                    for j in range(n)]
        for i in range(m):
            model.add_constraint({serve[i][j]: 1.0 for j in range(n)}, "=",
                                 round(float(active[i])), name=f"{tag}_client_{i}")
        for j in range(n):
            row = {serve[i][j]: self.revenue[i, j] for i in range(m)}
            row[overflow[j]] = -1.0
            if fixed_x:
                rhs = self.capacity * float(x[j])
            else:
                row[x[j]] = -self.capacity
                rhs = 0.0
            model.add_constraint(row, "<=", rhs, name=f"{tag}_cap_{j}")
        obj = {serve[i][j]: -weight * self.revenue[i, j]
               for i in range(m) for j in range(n)}
        for j in range(n):
            obj[overflow[j]] = weight * self.overflow_cost
        model.add_objective_terms(obj)

    def sample_scenario(self, rng: np.random.Generator) -> np.ndarray:
        return (rng.random(self.m_clients) < self.activation_prob).astype(float)

    def sample_first_stage(self, rng: np.random.Generator) -> np.ndarray:
        rate = rng.uniform(0.1, 0.9)
        return (rng.random(self.n_servers) < rate).astype(float)

    def to_dict(self) -> dict:
        return {"class": "sslp", "n_servers": self.n_servers,
                "m_clients": self.m_clients,
                "server_cost": self.server_cost.tolist(),
                "revenue": self.revenue.tolist(), "capacity": self.capacity,
                "overflow_cost": self.overflow_cost,
                "activation_prob": self.activation_prob, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> "SslpInstance":
        return cls(data["n_servers"], data["m_clients"],
                   np.asarray(data["server_cost"]), np.asarray(data["revenue"]),
                   data["capacity"], data["overflow_cost"],
                   data.get("activation_prob", 0.5), data.get("seed", 0))


def generate_sslp(n_servers: int = 5, m_clients: int = 25, seed: int = 0,
                  capacity_ratio: float = 1.5,
                  activation_prob: float = 0.5) -> SslpInstance:
    """Generated stand-in for the classical server-location benchmarks."""
    if n_servers < 1 or m_clients < 1:
        raise ValueError("need at least one server and one client")
    rng = np.random.default_rng(seed)
    cost = rng.integers(40, 81, n_servers).astype(float)
    revenue = rng.integers(1, 26, (m_clients, n_servers)).astype(float)
    expected_active = activation_prob * revenue.mean(axis=1).sum()
    capacity = float(np.ceil(capacity_ratio * expected_active / n_servers))
    overflow_cost = 10.0 * revenue.max()
    return SslpInstance(n_servers, m_clients, cost, revenue, capacity,
                        overflow_cost, activation_prob, seed)
