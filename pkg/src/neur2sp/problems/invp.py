"""Two-stage investment problem (bundled classical instance).

Two continuous first-stage variables on [0, 5] earn immediate revenue; four
second-stage variables (binary or bounded integer, by variant) earn profit
subject to two knapsack rows whose budgets are the realized scenario minus
a technology transform of the first stage.  Everything is stated as a
minimization.  Scenario support is the square [5, 15]^2; evaluation sets
are equidistant grids, so the scenario count must be a perfect square.

Integer recourse variables are compiled to binary via bit expansion, which
keeps the MILP layer's variable kinds to {continuous, binary}.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ..milp import CONTINUOUS, MipModel
from ..scenario_embedding import ScenarioSet
from . import TwoStageProblem

TECH_MATRICES = {
    "E": np.eye(2),
    "H": np.array([[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]]),
}


@dataclass
class InvpInstance(TwoStageProblem):
    cost: np.ndarray  # (2,)
    lb: np.ndarray
    ub: np.ndarray
    recourse_cost: np.ndarray  # (4,)
    rows: np.ndarray  # (2, 4)
    tech: np.ndarray  # (2, 2)
    second_kind: str  # "binary" | "integer"
    y_upper: np.ndarray  # used for the integer variant
    scenario_low: float = 5.0
    scenario_high: float = 15.0
    variant: str = "B_E"
    name: str = field(default="invp", init=False)

    def __post_init__(self):
        for attr in ("cost", "lb", "ub", "recourse_cost", "rows", "tech", "y_upper"):
            setattr(self, attr, np.asarray(getattr(self, attr), dtype=float))
        if self.second_kind not in ("binary", "integer"):
            raise ValueError(f"unknown second-stage kind {self.second_kind!r}")

    @property
    def problem_id(self) -> str:
        return f"INVP_{self.variant}"

    @property
    def n_first_stage(self) -> int:
        return self.cost.shape[0]

    @property
    def first_stage_cost(self) -> np.ndarray:
        return self.cost

    @property
    def first_stage_kinds(self) -> list[str]:
        return [CONTINUOUS] * self.n_first_stage

    @property
    def first_stage_bounds(self) -> list[tuple[float, float]]:
        return list(zip(self.lb.tolist(), self.ub.tolist()))

    @property
    def scenario_dim(self) -> int:
        return self.rows.shape[0]

    def add_first_stage(self, model: MipModel) -> list[int]:
        handles = [model.add_variable(f"x_{i}", CONTINUOUS, self.lb[i], self.ub[i])
                   for i in range(self.n_first_stage)]
        model.add_objective_terms({h: c for h, c in zip(handles, self.cost)})
        return handles

    def _recourse_exprs(self, model: MipModel, tag: str):
        """Per variable: affine expression {handle: coef} over binaries."""
        exprs = []
        for i in range(self.recourse_cost.shape[0]):
            if self.second_kind == "binary":
                exprs.append({model.add_binary(f"{tag}_y_{i}"): 1.0})
                continue
            upper = int(self.y_upper[i])
            n_bits = max(1, math.ceil(math.log2(upper + 1)))
            bits = {model.add_binary(f"{tag}_y_{i}_b{t}"): float(2 ** t)
                    for t in range(n_bits)}
            if 2 ** n_bits - 1 > upper:
                model.add_constraint(bits, "<=", float(upper),
                                     name=f"{tag}_ycap_{i}")
            exprs.append(bits)
        return exprs

    def add_second_stage(self, model: MipModel, x, xi: np.ndarray,
                         weight: float, tag: str = "s") -> None:
        xi = np.asarray(xi, dtype=float)
        fixed_x = isinstance(x, np.ndarray)
        exprs = self._recourse_exprs(model, tag)
        for r in range(self.rows.shape[0]):
            row: dict[int, float] = {}
            for i, expr in enumerate(exprs):
                for handle, coef in expr.items():
                    row[handle] = row.get(handle, 0.0) + self.rows[r, i] * coef
            if fixed_x:
                rhs = xi[r] - float(self.tech[r] @ x)
            else:
                for i, handle in enumerate(x):
                    row[handle] = row.get(handle, 0.0) + self.tech[r, i]
                rhs = xi[r]
            model.add_constraint(row, "<=", rhs, name=f"{tag}_row_{r}")
        obj: dict[int, float] = {}
        for i, expr in enumerate(exprs):
            for handle, coef in expr.items():
                obj[handle] = obj.get(handle, 0.0) + weight * self.recourse_cost[i] * coef
        model.add_objective_terms(obj)

    def sample_scenario(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.scenario_low, self.scenario_high, self.scenario_dim)

    def sample_scenarios(self, k: int, seed: int = 0) -> ScenarioSet:
        """Deterministic equidistant grid; k must be a perfect square."""
        side = math.isqrt(k)
        if side * side != k:
            raise ValueError(f"scenario count {k} is not a perfect square")
        axis = np.linspace(self.scenario_low, self.scenario_high, side)
        grid = np.array([(a, b) for a in axis for b in axis])
        return ScenarioSet.uniform(grid)

    def sample_first_stage(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lb, self.ub)

    def to_dict(self) -> dict:
        return {"class": "invp", "cost": self.cost.tolist(), "lb": self.lb.tolist(),
                "ub": self.ub.tolist(), "recourse_cost": self.recourse_cost.tolist(),
                "rows": self.rows.tolist(), "tech": self.tech.tolist(),
                "second_kind": self.second_kind, "y_upper": self.y_upper.tolist(),
                "scenario_low": self.scenario_low, "scenario_high": self.scenario_high,
                "variant": self.variant}

    @classmethod
    def from_dict(cls, data: dict) -> "InvpInstance":
        return cls(np.asarray(data["cost"]), np.asarray(data["lb"]),
                   np.asarray(data["ub"]), np.asarray(data["recourse_cost"]),
                   np.asarray(data["rows"]), np.asarray(data["tech"]),
                   data["second_kind"], np.asarray(data["y_upper"]),
                   data["scenario_low"], data["scenario_high"],
                   data.get("variant", "B_E"))


def load_invp(variant: str = "B_E") -> InvpInstance:
    """Load the bundled instance; variant is {B,I}_{E,H} for binary/integer
    second stage and identity/mixing technology matrix."""
    try:
        kind_code, tech_code = variant.upper().split("_")
        second_kind = {"B": "binary", "I": "integer"}[kind_code]
        tech = TECH_MATRICES[tech_code]
    except (ValueError, KeyError):
        raise ValueError(f"unknown variant {variant!r}; expected one of "
                         "B_E, B_H, I_E, I_H")
    raw = resources.files("neur2sp.problems").joinpath("data/invp_schultz.json")
    data = json.loads(raw.read_text())
    return InvpInstance(np.asarray(data["first_stage_cost"]),
                        np.asarray(data["first_stage_lb"]),
                        np.asarray(data["first_stage_ub"]),
                        np.asarray(data["recourse_cost"]),
                        np.asarray(data["recourse_rows"]), tech, second_kind,
                        np.asarray(data["integer_upper"]),
                        float(data["scenario_low"]), float(data["scenario_high"]),
                        variant.upper())
