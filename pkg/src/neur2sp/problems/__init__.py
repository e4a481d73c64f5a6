"""Two-stage problem library: CFLP, SSLP and the Schultz investment problem.

Every problem is a minimization after load, exposes its first-stage
feasible set as rows/bounds on a MipModel, can emit one second-stage copy
per scenario (extensive form) or with the first stage fixed (the value
oracle Q), and samples scenarios from its uncertainty distribution.
"""

from __future__ import annotations

import hashlib
import json
from abc import ABC, abstractmethod
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..milp import MipModel, SolveParams, solve
from ..scenario_embedding import ScenarioSet


class SecondStageError(RuntimeError):
    """Second-stage subproblem failed to solve to optimality."""


class TwoStageProblem(ABC):
    """Contract shared by all problem classes.

    ``add_second_stage`` accepts the first stage either as variable handles
    (EF construction) or as a numeric vector (value-function oracle); in the
    numeric case first-stage terms fold into the right-hand sides.
    """

    name: str = "generic"

    # first-stage description ------------------------------------------------

    @property
    @abstractmethod
    def n_first_stage(self) -> int: ...

    @property
    @abstractmethod
    def first_stage_cost(self) -> np.ndarray: ...

    @property
    @abstractmethod
    def first_stage_kinds(self) -> list[str]: ...

    @property
    @abstractmethod
    def first_stage_bounds(self) -> list[tuple[float, float]]: ...

    @abstractmethod
    def add_first_stage(self, model: MipModel) -> list[int]:
        """Create the x variables, their feasibility rows, and the c^T x
        objective terms.  Returns the handles."""

    @abstractmethod
    def add_second_stage(self, model: MipModel, x, xi: np.ndarray,
                         weight: float, tag: str = "s") -> None:
        """Append one scenario copy with objective weight ``weight``."""

    # uncertainty -------------------------------------------------------------

    @property
    @abstractmethod
    def scenario_dim(self) -> int: ...

    @abstractmethod
    def sample_scenario(self, rng: np.random.Generator) -> np.ndarray:
        """One draw from the uncertainty distribution (used for datasets)."""

    def sample_scenarios(self, k: int, seed: int) -> ScenarioSet:
        """Evaluation scenario set: k i.i.d. draws with uniform weights."""
        if k < 1:
            raise ValueError("need at least one scenario")
        rng = np.random.default_rng(seed)
        return ScenarioSet.uniform(
            np.stack([self.sample_scenario(rng) for _ in range(k)]))

    @abstractmethod
    def sample_first_stage(self, rng: np.random.Generator) -> np.ndarray:
        """A random feasible first-stage decision (dataset generation)."""

    def check_first_stage(self, x: np.ndarray, tol: float = 1e-6) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n_first_stage:
            return False
        for value, kind, (lb, ub) in zip(x, self.first_stage_kinds,
                                         self.first_stage_bounds):
            if value < lb - tol or value > ub + tol:
                return False
            if kind == "binary" and abs(value - round(value)) > tol:
                return False
        return True

    # shared machinery --------------------------------------------------------

    def second_stage_value(self, x, xi, solve_params: SolveParams | None = None) -> float:
        """Q(x, xi): optimal second-stage cost for a fixed first stage."""
        model = MipModel()
        self.add_second_stage(model, np.asarray(x, dtype=float),
                              np.asarray(xi, dtype=float), 1.0)
        params = solve_params or SolveParams(collect_incumbents=False)
        result = solve(model, params)
        if result.status != "optimal":
            raise SecondStageError(
                f"{self.name} second stage ended with status {result.status}: "
                f"{result.message}")
        return result.objective

    def build_ef(self, scen_set: ScenarioSet) -> MipModel:
        """Extensive form: shared first stage, one weighted copy per scenario."""
        model = MipModel()
        handles = self.add_first_stage(model)
        for k in range(len(scen_set)):
            self.add_second_stage(model, handles, scen_set.scenarios[k],
                                  float(scen_set.probs[k]), tag=f"s{k}")
        return model

    def evaluate_true_objective(self, x, scen_set: ScenarioSet,
                                workers: int = 1) -> float:
        """c^T x + sum_k p_k Q(x, xi_k), optionally parallel over scenarios."""
        x = np.asarray(x, dtype=float)
        if workers > 1 and len(scen_set) > 1:
            jobs = [(self, x, scen_set.scenarios[k]) for k in range(len(scen_set))]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                values = list(pool.map(_q_job, jobs))
        else:
            values = [self.second_stage_value(x, scen_set.scenarios[k])
                      for k in range(len(scen_set))]
        return float(self.first_stage_cost @ x + scen_set.probs @ np.array(values))

    # serialization ------------------------------------------------------------

    @abstractmethod
    def to_dict(self) -> dict: ...

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    def instance_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _q_job(job) -> float:
    problem, x, xi = job
    return problem.second_stage_value(x, xi)


def from_dict(data: dict) -> TwoStageProblem:
    from .cflp import CflpInstance
    from .invp import InvpInstance
    from .sslp import SslpInstance
    classes = {"cflp": CflpInstance, "sslp": SslpInstance, "invp": InvpInstance}
    kind = data.get("class")
    if kind not in classes:
        raise ValueError(f"unknown problem class {kind!r}")
    return classes[kind].from_dict(data)


def load(path) -> TwoStageProblem:
    with open(path) as fh:
        return from_dict(json.load(fh))


def generate_instance(kind: str, seed: int = 0, **params) -> TwoStageProblem:
    """Deterministic instance generation; see each class for parameters."""
    kind = kind.lower()
    if kind == "cflp":
        from .cflp import generate_cflp
        return generate_cflp(seed=seed, **params)
    if kind == "sslp":
        from .sslp import generate_sslp
        return generate_sslp(seed=seed, **params)
    if kind == "invp":
        from .invp import load_invp
        return load_invp(**params)
    raise ValueError(f"unknown problem class {kind!r}")
