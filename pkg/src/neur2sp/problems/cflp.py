"""Stochastic capacitated facility location.

First stage opens facilities; the second stage assigns each customer's
realized demand to one open facility (binary assignment) or to a slack
served at a prohibitive per-unit penalty, which guarantees relatively
complete recourse.  Generator constants follow the classical benchmark
recipe (unit square locations, U[5,35] demands, U[10,160] capacities
rescaled to a capacity/demand ratio, fixed costs tied to sqrt(capacity));
they are exposed here because the exact values are generator policy, not
problem structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..milp import BINARY, CONTINUOUS, MipModel
from . import TwoStageProblem


@dataclass
class CflpInstance(TwoStageProblem):
    n_facilities: int
    n_customers: int
    fixed_cost: np.ndarray  # (n,)
    capacity: np.ndarray  # (n,)
    assign_cost: np.ndarray  # (n, m), serving all of customer j from facility i
    base_demand: np.ndarray  # (m,), used for capacity scaling and costs
    demand_low: int = 5
    demand_high: int = 35
    penalty: float = 0.0  # per unit of unserved demand
    ratio: float = 2.0
    seed: int = 0
    name: str = field(default="cflp", init=False)

    def __post_init__(self):
        self.fixed_cost = np.asarray(self.fixed_cost, dtype=float)
        self.capacity = np.asarray(self.capacity, dtype=float)
        self.assign_cost = np.asarray(self.assign_cost, dtype=float)
        self.base_demand = np.asarray(self.base_demand, dtype=float)
        if (self.fixed_cost <= 0).any() or (self.capacity <= 0).any():
            raise ValueError("costs and capacities must be positive")
        if self.penalty <= self.assign_cost.max():
            raise ValueError("penalty must dominate every assignment cost")

    @property
    def problem_id(self) -> str:
        return f"CFLP_{self.n_facilities}_{self.n_customers}"

    @property
    def n_first_stage(self) -> int:
        return self.n_facilities

    @property
    def first_stage_cost(self) -> np.ndarray:
        return self.fixed_cost

    @property
    def first_stage_kinds(self) -> list[str]:
        return [BINARY] * self.n_facilities

    @property
    def first_stage_bounds(self) -> list[tuple[float, float]]:
        return [(0.0, 1.0)] * self.n_facilities

    @property
    def scenario_dim(self) -> int:
        return self.n_customers

    def add_first_stage(self, model: MipModel) -> list[int]:
        handles = [model.add_binary(f"open_{i}") for i in range(self.n_facilities)]
        model.add_objective_terms({h: c for h, c in zip(handles, self.fixed_cost)})
        return handles

    def add_second_stage(self, model: MipModel, x, xi: np.ndarray,
                         weight: float, tag: str = "s") -> None:
        n, m = self.n_facilities, self.n_customers
        demand = np.asarray(xi, dtype=float)
        fixed_x = isinstance(x, np.ndarray)  # numeric x folds into the rhs
        assign = [[model.add_binary(f"{tag}_y_{i}_{j}") for j in range(m)]
                  for i in range(n)]
        slack = [model.add_variable(f"{tag}_u_{j}", CONTINUOUS, 0.0, 1.0)
                 for j in range(m)]
        for j in range(m):
            row = {assign[i][j]: 1.0 for i in range(n)}
            row[slack[j]] = 1.0
            model.add_constraint(row, "=", 1.0, name=f"{tag}_serve_{j}")
        for i in range(n):
            row = {assign[i][j]: demand[j] for j in range(m)}
            if fixed_x:
                rhs = self.capacity[i] * float(x[i])
            else:
                row[x[i]] = -self.capacity[i]
                rhs = 0.0
            model.add_constraint(row, "<=", rhs, name=f"{tag}_cap_{i}")
        obj = {assign[i][j]: weight * self.assign_cost[i, j]
               for i in range(n) for j in range(m)}
        for j in range(m):
            obj[slack[j]] = weight * self.penalty * demand[j]
        model.add_objective_terms(obj)

    def sample_scenario(self, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(self.demand_low, self.demand_high + 1,
                            self.n_customers).astype(float)

    def sample_first_stage(self, rng: np.random.Generator) -> np.ndarray:
        # per-sample open rate drawn afresh, so datasets cover sparse and
        # dense opening patterns
        rate = rng.uniform(0.1, 0.9)
        return (rng.random(self.n_facilities) < rate).astype(float)

    def to_dict(self) -> dict:
        return {"class": "cflp", "n_facilities": self.n_facilities,
                "n_customers": self.n_customers,
                "fixed_cost": self.fixed_cost.tolist(),
                "capacity": self.capacity.tolist(),
                "assign_cost": self.assign_cost.tolist(),
                "base_demand": self.base_demand.tolist(),
                "demand_low": self.demand_low, "demand_high": self.demand_high,
                "penalty": self.penalty, "ratio": self.ratio, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> "CflpInstance":
        return cls(data["n_facilities"], data["n_customers"],
                   np.asarray(data["fixed_cost"]), np.asarray(data["capacity"]),
                   np.asarray(data["assign_cost"]), np.asarray(data["base_demand"]),
                   data["demand_low"], data["demand_high"], data["penalty"],
                   data["ratio"], data.get("seed", 0))


def generate_cflp(n_facilities: int = 10, n_customers: int = 10, seed: int = 0,
                  ratio: float = 2.0, demand_low: int = 5,
                  demand_high: int = 35) -> CflpInstance:
    """Benchmark-style generator; deterministic per seed."""
    if n_facilities < 1 or n_customers < 1:
        raise ValueError("need at least one facility and one customer")
    rng = np.random.default_rng(seed)
    f_xy = rng.uniform(0.0, 1.0, (n_facilities, 2))
    c_xy = rng.uniform(0.0, 1.0, (n_customers, 2))
    base_demand = rng.integers(demand_low, demand_high + 1, n_customers).astype(float)
    capacity = rng.uniform(10.0, 160.0, n_facilities)
    capacity *= ratio * base_demand.sum() / capacity.sum()
    fixed = rng.uniform(0.0, 90.0, n_facilities) \
        + rng.uniform(100.0, 110.0, n_facilities) * np.sqrt(capacity)
    dist = np.linalg.norm(f_xy[:, None, :] - c_xy[None, :, :], axis=2)
    assign = 10.0 * dist * base_demand[None, :]
    penalty = 10.0 * (fixed.max() + assign.max())
    return CflpInstance(n_facilities, n_customers, fixed, capacity, assign,
                        base_demand, demand_low, demand_high, penalty, ratio, seed)
