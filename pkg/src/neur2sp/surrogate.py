"""Assemble and solve deterministic surrogate MIPs for a two-stage problem.

Three surrogate families share the first-stage feasible set and differ in
how the expected second-stage cost is approximated:

* single-cut: one embedded prediction head; the scenario set enters only
  through a precomputed constant embedding vector, so the MIP size does
  not depend on the scenario count;
* multi-cut: one embedded network copy per scenario, sharing the
  first-stage variables, with probability-weighted output terms;
* linear: the baseline regressor folds into the objective with no
  auxiliary variables at all.

After solving, the first-stage solution is extracted (binaries rounded at
0.5, with a projection repair if the result were ever infeasible) and
re-priced exactly on the scenario set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .milp import BINARY, MipModel, SolveParams, SolveResult, solve
from .nn_core import TrainedNetwork
from .problems import TwoStageProblem
from .relu_embed import EmbeddedNetwork, InputBox, embed
from .scenario_embedding import ScenarioSet, SingleCutNet, embed_scenarios
from .training import LinearModel


class SurrogateBuildError(ValueError):
    """Model/problem dimensions disagree, or the build limits are exceeded."""


class SurrogateSolveError(RuntimeError):
    """Surrogate MIP did not produce a usable solution (with a nonempty
    first-stage set this points at an embedding bug)."""


@dataclass
class SurrogateSpec:
    mode: str  # "sc" | "mc" | "lr"
    model: object  # SingleCutNet | TrainedNetwork | LinearModel
    problem: TwoStageProblem
    scenarios: ScenarioSet
    solve_params: SolveParams = field(default_factory=SolveParams)
    max_copies: int = 2000

    def __post_init__(self):
        expected = {"sc": SingleCutNet, "mc": TrainedNetwork, "lr": LinearModel}
        if self.mode not in expected:
            raise SurrogateBuildError(f"unknown surrogate mode {self.mode!r}")
        if not isinstance(self.model, expected[self.mode]):
            raise SurrogateBuildError(
                f"mode {self.mode!r} needs a {expected[self.mode].__name__}, "
                f"got {type(self.model).__name__}")


@dataclass
class SurrogateModel:
    model: MipModel
    x_handles: list[int]
    outputs: list[int]
    embedded: list[EmbeddedNetwork]
    mode: str

    @property
    def sizes(self) -> dict:
        return {"columns": self.model.n_variables,
                "rows": self.model.n_constraints,
                "binaries": self.model.n_binaries}


@dataclass
class SurrogateResult:
    mode: str
    x: np.ndarray
    surrogate_objective: float
    true_objective: float
    solve: SolveResult
    sizes: dict
    repaired: bool = False
    ef_time_to_match: float | None = None
    ef_match_failed: bool | None = None

    def to_dict(self) -> dict:
        return {"mode": self.mode, "x": self.x.tolist(),
                "surrogate_objective": self.surrogate_objective,
                "true_objective": self.true_objective,
                "status": self.solve.status, "wall_time": self.solve.wall_time,
                "mip_gap": self.solve.mip_gap, "sizes": self.sizes,
                "repaired": self.repaired,
                "ef_time_to_match": self.ef_time_to_match,
                "ef_match_failed": self.ef_match_failed}


def _first_stage_box(problem: TwoStageProblem, extra_fixed: np.ndarray) -> InputBox:
    bounds = problem.first_stage_bounds
    lower = np.concatenate([[lo for lo, _ in bounds], extra_fixed])
    upper = np.concatenate([[hi for _, hi in bounds], extra_fixed])
    return InputBox(lower, upper)


def build_sc_surrogate(spec: SurrogateSpec) -> SurrogateModel:
    """Single embedded head over [x, constant scenario embedding]."""
    net: SingleCutNet = spec.model
    problem = spec.problem
    if net.n_x != problem.n_first_stage:
        raise SurrogateBuildError(
            f"model expects {net.n_x} first-stage vars, problem has "
            f"{problem.n_first_stage}")
    if net.scen_dim != problem.scenario_dim:
        raise SurrogateBuildError("scenario dimension mismatch")
    model = MipModel()
    handles = problem.add_first_stage(model)
    embedding = embed_scenarios(net, spec.scenarios)
    box = _first_stage_box(problem, embedding)
    # keep every unit's binary so the surrogate's size depends only on the
    # architecture, never on the scenario set behind the embedding vector
    emb = embed(model, net.phi_folded(),
                list(handles) + [None] * embedding.shape[0], box,
                sense="min", prefix="phi", stable_elimination=False)
    model.add_objective_terms({emb.output: 1.0})
    return SurrogateModel(model, handles, [emb.output], [emb], "sc")


def build_mc_surrogate(spec: SurrogateSpec) -> SurrogateModel:
    """One embedded network copy per scenario over [x, xi_k]."""
    net: TrainedNetwork = spec.model
    problem = spec.problem
    k = len(spec.scenarios)
    if k > spec.max_copies:
        raise SurrogateBuildError(
            f"{k} scenario copies exceed max_copies={spec.max_copies}; "
            "one network copy is embedded per scenario, so either reduce "
            "the scenario count, raise max_copies, or use the single-cut "
            "surrogate whose size is scenario-independent")
    if net.mlp.in_dim != problem.n_first_stage + problem.scenario_dim:
        raise SurrogateBuildError(
            f"model input dim {net.mlp.in_dim} != first-stage + scenario dim "
            f"{problem.n_first_stage + problem.scenario_dim}")
    model = MipModel()
    handles = problem.add_first_stage(model)
    folded = net.folded()
    outputs, embedded = [], []
    inputs = list(handles) + [None] * problem.scenario_dim
    for lam in range(k):
        box = _first_stage_box(problem, spec.scenarios.scenarios[lam])
        emb = embed(model, folded, inputs, box, sense="min", prefix=f"nn{lam}")
        model.add_objective_terms({emb.output: float(spec.scenarios.probs[lam])})
        outputs.append(emb.output)
        embedded.append(emb)
    return SurrogateModel(model, handles, outputs, embedded, "mc")


def build_lr_surrogate(spec: SurrogateSpec) -> SurrogateModel:
    """Linear baseline: expectation folds into one linear objective."""
    lin: LinearModel = spec.model
    problem = spec.problem
    n = problem.n_first_stage
    if lin.w.shape[0] != n + problem.scenario_dim:
        raise SurrogateBuildError(
            f"linear model has {lin.w.shape[0]} coefficients, expected "
            f"{n + problem.scenario_dim}")
    model = MipModel()
    handles = problem.add_first_stage(model)
    w_raw, b_raw = lin.raw_coefficients()
    const = float(spec.scenarios.probs @ (spec.scenarios.scenarios @ w_raw[n:]) + b_raw)
    model.add_objective_terms({h: w_raw[i] for i, h in enumerate(handles)}, const)
    return SurrogateModel(model, handles, [], [], "lr")


_BUILDERS = {"sc": build_sc_surrogate, "mc": build_mc_surrogate,
             "lr": build_lr_surrogate}


def build_surrogate(spec: SurrogateSpec) -> SurrogateModel:
    return _BUILDERS[spec.mode](spec)


def _extract_first_stage(problem: TwoStageProblem, built: SurrogateModel,
                         values: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.array([values[h] for h in built.x_handles], dtype=float)
    for i, (kind, (lo, hi)) in enumerate(zip(problem.first_stage_kinds,
                                             problem.first_stage_bounds)):
        if kind == BINARY:
            x[i] = 1.0 if x[i] >= 0.5 else 0.0
        x[i] = min(max(x[i], lo), hi)
    if problem.check_first_stage(x):
        return x, False
    return _project_first_stage(problem, x), True


def _project_first_stage(problem: TwoStageProblem, target: np.ndarray) -> np.ndarray:
    """Nearest feasible first stage (Hamming for binaries, L1 otherwise)."""
    model = MipModel()
    handles = problem.add_first_stage(model)
    model.set_objective({})
    obj: dict[int, float] = {}
    const = 0.0
    for i, (kind, h) in enumerate(zip(problem.first_stage_kinds, handles)):
        if kind == BINARY:
            obj[h] = 1.0 - 2.0 * target[i]
            const += target[i]
        else:
            dev = model.add_variable(f"dev_{i}")
            model.add_constraint({handles[i]: 1.0, dev: -1.0}, "<=", target[i])
            model.add_constraint({handles[i]: 1.0, dev: 1.0}, ">=", target[i])
            obj[dev] = 1.0
    model.add_objective_terms(obj, const)
    result = solve(model, SolveParams(collect_incumbents=False))
    if result.status != "optimal":
        raise SurrogateSolveError(f"first-stage projection failed: {result.status}")
    return np.array([result.values[h] for h in handles])


def time_to_match(incumbents, target: float, tol: float = 1e-9) -> float | None:
    """Earliest trajectory time reaching ``target`` quality (min sense)."""
    for t, obj in incumbents:
        if obj <= target + tol * max(1.0, abs(target)):
            return t
    return None


def solve_and_evaluate(spec: SurrogateSpec, workers: int = 1,
                       ef_incumbents=None) -> SurrogateResult:
    """Build + solve the surrogate, then price its first stage exactly."""
    built = build_surrogate(spec)
    result = solve(built.model, spec.solve_params)
    if not result.ok or result.values is None:
        raise SurrogateSolveError(
            f"surrogate solve ended with status {result.status}: {result.message}")
    x, repaired = _extract_first_stage(spec.problem, built, result.values)
    true_obj = spec.problem.evaluate_true_objective(x, spec.scenarios, workers)
    out = SurrogateResult(spec.mode, x, result.objective, true_obj, result,
                          built.sizes, repaired)
    if ef_incumbents is not None:
        matched = time_to_match(ef_incumbents, true_obj)
        out.ef_match_failed = matched is None
        out.ef_time_to_match = matched if matched is not None else (
            ef_incumbents[-1][0] if ef_incumbents else math.inf)
    return out
