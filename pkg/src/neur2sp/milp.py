"""Solver-agnostic MILP construction and a pluggable solve backend.

A :class:`MipModel` is a plain container of variables (continuous or binary),
linear constraints and a linear objective.  Solving goes through a backend
adapter; the default backend is HiGHS via ``scipy.optimize.milp``.  The
backend to use is picked from, in order: an explicit argument, the
``NEUR2SP_SOLVER`` environment variable, the built-in default ``"highs"``.

Incumbent trajectories (time-stamped improving objectives) are recovered
from the solver log, since the scipy interface exposes no callbacks.
"""

from __future__ import annotations

import math
import os
import re
import tempfile
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

CONTINUOUS = "continuous"
BINARY = "binary"

_SENSES = ("<=", "=", ">=")

FEASIBILITY_TOL = 1e-6


class MipUsageError(ValueError):
    """Raised on malformed model construction (unknown handle, bad bounds...)."""


class LpParseError(ValueError):
    """Raised when LP-format text cannot be parsed back into a model."""


@dataclass
class Variable:
    name: str
    kind: str
    lb: float
    ub: float


@dataclass
class Constraint:
    coeffs: dict[int, float]
    sense: str
    rhs: float
    name: str


@dataclass
class SolveParams:
    """Parameters forwarded to the backend solve."""

    time_limit: float | None = None
    mip_gap: float = 1e-4
    threads: int = 1
    seed: int = 0
    collect_incumbents: bool = True


@dataclass
class SolveResult:
    status: str  # optimal | feasible_limit | infeasible | unbounded | error
    objective: float | None
    values: np.ndarray | None
    mip_gap: float | None
    wall_time: float
    incumbents: list[tuple[float, float]] = field(default_factory=list)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "feasible_limit")


class MipModel:
    """Mutable MILP builder.  Variable handles are dense integer indices."""

    def __init__(self) -> None:
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective_sense: str = "min"
        self.objective: dict[int, float] = {}
        self.objective_constant: float = 0.0
        self._names: set[str] = set()

    # -- construction -------------------------------------------------------

    def add_variable(self, name: str | None = None, kind: str = CONTINUOUS,
                     lb: float = 0.0, ub: float = math.inf) -> int:
        if kind not in (CONTINUOUS, BINARY):
            raise MipUsageError(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if math.isnan(lb) or math.isnan(ub) or lb > ub:
            raise MipUsageError(f"invalid bounds [{lb}, {ub}] for {name!r}")
        handle = len(self.variables)
        if name is None:
            name = f"v{handle}"
        if name in self._names:
            raise MipUsageError(f"duplicate variable name {name!r}")
        self._names.add(name)
        self.variables.append(Variable(name, kind, float(lb), float(ub)))
        return handle

    def add_binary(self, name: str | None = None) -> int:
        return self.add_variable(name, kind=BINARY, lb=0.0, ub=1.0)

    def _check_coeffs(self, coeffs) -> dict[int, float]:
        out: dict[int, float] = {}
        items = coeffs.items() if isinstance(coeffs, dict) else coeffs
        for handle, coef in items:
            if not 0 <= handle < len(self.variables):
                raise MipUsageError(f"unknown variable handle {handle}")
            if not math.isfinite(coef):
                raise MipUsageError(f"non-finite coefficient for handle {handle}")
            if coef != 0.0:
                out[handle] = out.get(handle, 0.0) + float(coef)
        return out

    def add_constraint(self, coeffs, sense: str, rhs: float,
                       name: str | None = None) -> int:
        """Add a row ``sum(coef * var) sense rhs``.  Duplicates are kept."""
        if sense not in _SENSES:
            raise MipUsageError(f"unknown sense {sense!r}")
        if not math.isfinite(rhs):
            raise MipUsageError("constraint rhs must be finite")
        row = len(self.constraints)
        if name is None:
            name = f"c{row}"
        self.constraints.append(
            Constraint(self._check_coeffs(coeffs), sense, float(rhs), name))
        return row

    def set_objective(self, coeffs, sense: str = "min", constant: float = 0.0) -> None:
        if sense not in ("min", "max"):
            raise MipUsageError(f"unknown objective sense {sense!r}")
        self.objective = self._check_coeffs(coeffs)
        self.objective_sense = sense
        self.objective_constant = float(constant)

    def add_objective_terms(self, coeffs, constant: float = 0.0) -> None:
        """Accumulate linear terms into the current objective."""
        for handle, coef in self._check_coeffs(coeffs).items():
            self.objective[handle] = self.objective.get(handle, 0.0) + coef
        self.objective_constant += float(constant)

    # -- inspection ---------------------------------------------------------

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    @property
    def n_binaries(self) -> int:
        return sum(1 for v in self.variables if v.kind == BINARY)

    def objective_value(self, values: np.ndarray) -> float:
        total = self.objective_constant
        for handle, coef in self.objective.items():
            total += coef * values[handle]
        return total

    def constraint_violation(self, values: np.ndarray) -> float:
        """Worst violation over rows and bounds, via plain float arithmetic.

        Kept independent of any solver so it can audit returned solutions.
        """
        worst = 0.0
        for var, value in zip(self.variables, values):
            worst = max(worst, var.lb - value, value - var.ub)
            if var.kind == BINARY:
                worst = max(worst, abs(value - round(value)))
        for con in self.constraints:
            lhs = sum(coef * values[h] for h, coef in con.coeffs.items())
            if con.sense == "<=":
                worst = max(worst, lhs - con.rhs)
            elif con.sense == ">=":
                worst = max(worst, con.rhs - lhs)
            else:
                worst = max(worst, abs(lhs - con.rhs))
        return worst


# -- solving ----------------------------------------------------------------


def _monotone(incumbents: list[tuple[float, float]], sense: str) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    for t, obj in sorted(incumbents, key=lambda p: p[0]):
        if not out:
            out.append((t, obj))
        elif (obj < out[-1][1] - 1e-12) if sense == "min" else (obj > out[-1][1] + 1e-12):
            out.append((t, obj))
    return out


class _CaptureFd:
    """Redirect an OS-level file descriptor into a temp file (HiGHS logs to
    C stdout, which Python-level redirection cannot see)."""

    def __init__(self, fd: int = 1):
        self.fd = fd

    def __enter__(self):
        import sys
        sys.stdout.flush()
        self._saved = os.dup(self.fd)
        self._tmp = tempfile.TemporaryFile()
        os.dup2(self._tmp.fileno(), self.fd)
        return self

    def __exit__(self, *exc):
        import sys
        sys.stdout.flush()
        os.dup2(self._saved, self.fd)
        os.close(self._saved)
        return False

    def text(self) -> str:
        self._tmp.seek(0)
        data = self._tmp.read().decode(errors="replace")
        self._tmp.close()
        return data


_TIME_FIELD = re.compile(r"^\d+(\.\d+)?s$")


def _parse_highs_incumbents(log: str) -> list[tuple[float, float]]:
    """Pull (time, best objective) pairs out of the HiGHS B&B node table."""
    points = []
    for line in log.splitlines():
        fields = line.split()
        if len(fields) < 8 or not _TIME_FIELD.match(fields[-1]):
            continue
        try:
            best = float(fields[-7])
        except ValueError:
            continue
        if not math.isfinite(best):
            continue
        points.append((float(fields[-1][:-1]), best))
    return points


class ScipyHighsBackend:
    """HiGHS via scipy.optimize.milp.

    scipy accepts only a handful of option names; everything else is passed
    to HiGHS verbatim (with a RuntimeWarning we silence).  HiGHS has no
    callback hook through this interface, so incumbent capture parses the
    solver log instead.
    """

    name = "highs"

    def solve(self, model: MipModel, params: SolveParams) -> SolveResult:
        from scipy import sparse
        from scipy.optimize import Bounds, LinearConstraint, milp

        n = model.n_variables
        sign = 1.0 if model.objective_sense == "min" else -1.0
        c = np.zeros(n)
        for handle, coef in model.objective.items():
            c[handle] = sign * coef

        lb = np.array([v.lb for v in model.variables])
        ub = np.array([v.ub for v in model.variables])
        integrality = np.array(
            [1 if v.kind == BINARY else 0 for v in model.variables])

        constraints = []
        if model.constraints:
            rows, cols, vals = [], [], []
            clb = np.empty(len(model.constraints))
            cub = np.empty(len(model.constraints))
            for i, con in enumerate(model.constraints):
                for handle, coef in con.coeffs.items():
                    rows.append(i)
                    cols.append(handle)
                    vals.append(coef)
                clb[i] = -np.inf if con.sense == "<=" else con.rhs
                cub[i] = np.inf if con.sense == ">=" else con.rhs
            mat = sparse.csr_array(
                (vals, (rows, cols)), shape=(len(model.constraints), n))
            constraints.append(LinearConstraint(mat, clb, cub))

        options: dict = {
            "mip_rel_gap": params.mip_gap,
            "threads": params.threads,
            "random_seed": params.seed,
            "disp": params.collect_incumbents,
        }
        if params.time_limit is not None:
            options["time_limit"] = float(params.time_limit)

        start = time.perf_counter()
        log = ""
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                if params.collect_incumbents:
                    with _CaptureFd(1) as cap:
                        res = milp(c=c, constraints=constraints,
                                   bounds=Bounds(lb, ub),
                                   integrality=integrality, options=options)
                    log = cap.text()
                else:
                    res = milp(c=c, constraints=constraints,
                               bounds=Bounds(lb, ub),
                               integrality=integrality, options=options)
        except Exception as exc:  # backend failure, not a model property
            return SolveResult("error", None, None, None,
                               time.perf_counter() - start, [], str(exc))
        wall = time.perf_counter() - start

        status_map = {0: "optimal", 1: "feasible_limit", 2: "infeasible",
                      3: "unbounded", 4: "error"}
        status = status_map.get(res.status, "error")
        values = np.asarray(res.x) if res.x is not None else None
        if status == "feasible_limit" and values is None:
            status = "error"
        objective = None
        gap = None
        if values is not None:
            objective = model.objective_value(values)
            gap = float(res.mip_gap) if res.mip_gap is not None else None

        incumbents: list[tuple[float, float]] = []
        if log:
            # the solver log reports objectives without our constant term
            incumbents = [(t, sign * obj + model.objective_constant)
                          for t, obj in _parse_highs_incumbents(log)]
        if objective is not None:
            incumbents.append((wall, objective))
        incumbents = _monotone(incumbents, model.objective_sense)

        return SolveResult(status, objective, values, gap, wall, incumbents,
                           res.message or "")


_BACKENDS = {
    "highs": ScipyHighsBackend,
    "scipy": ScipyHighsBackend,
}


def get_backend(name: str | None = None):
    name = name or os.environ.get("NEUR2SP_SOLVER") or "highs"
    try:
        return _BACKENDS[name.lower()]()
    except KeyError:
        raise MipUsageError(
            f"unknown solver backend {name!r}; available: {sorted(set(_BACKENDS))}")


def solve(model: MipModel, params: SolveParams | None = None,
          backend: str | None = None) -> SolveResult:
    """Solve the model; the returned values are audited against the rows."""
    params = params or SolveParams()
    result = get_backend(backend).solve(model, params)
    if result.values is not None:
        violation = model.constraint_violation(result.values)
        if violation > 10 * FEASIBILITY_TOL:
            return SolveResult("error", None, None, None, result.wall_time,
                               result.incumbents,
                               f"backend solution violates constraints by {violation:.3g}")
    return result


# -- LP-format export / import ----------------------------------------------

_LP_NAME_OK = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _lp_name(var: Variable, handle: int) -> str:
    if _LP_NAME_OK.match(var.name):
        return var.name
    return f"x{handle}"


def _lp_expr(coeffs: dict[int, float], names: list[str]) -> str:
    if not coeffs:
        return "0 " + names[0] if names else "0"
    parts = []
    for handle in sorted(coeffs):
        coef = coeffs[handle]
        sign = "-" if coef < 0 else "+"
        parts.append(f"{sign} {abs(coef):.17g} {names[handle]}")
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def export_lp(model: MipModel) -> str:
    """Serialize to CPLEX LP format (subset: linear rows, bounds, binaries)."""
    names = [_lp_name(v, i) for i, v in enumerate(model.variables)]
    if len(set(names)) != len(names):  # sanitization collided; fall back
        names = [f"x{i}" for i in range(len(names))]
    lines = ["\\ generated by neur2sp"]
    lines.append("Minimize" if model.objective_sense == "min" else "Maximize")
    obj = _lp_expr(model.objective, names)
    if model.objective_constant:
        const = model.objective_constant
        obj += f" {'-' if const < 0 else '+'} {abs(const):.17g}"
    lines.append(" obj: " + obj)
    lines.append("Subject To")
    for con in model.constraints:
        sense = {"<=": "<=", ">=": ">=", "=": "="}[con.sense]
        lines.append(f" {con.name}: {_lp_expr(con.coeffs, names)} {sense} {con.rhs:.17g}")
    lines.append("Bounds")
    for handle, var in enumerate(model.variables):
        if var.kind == BINARY:
            continue
        lo = "-inf" if var.lb == -math.inf else f"{var.lb:.17g}"
        hi = "+inf" if var.ub == math.inf else f"{var.ub:.17g}"
        if var.lb == -math.inf and var.ub == math.inf:
            lines.append(f" {names[handle]} free")
        else:
            lines.append(f" {lo} <= {names[handle]} <= {hi}")
    binaries = [names[h] for h, v in enumerate(model.variables) if v.kind == BINARY]
    if binaries:
        lines.append("Binaries")
        for name in binaries:
            lines.append(f" {name}")
    lines.append("End")
    return "\n".join(lines) + "\n"


_TOKEN = re.compile(r"(<=|>=|=|[+-]|[A-Za-z_][A-Za-z0-9_]*:?|[0-9.eE+-]+|\binf\b)")


def _parse_terms(tokens: list[str], var_index: dict[str, int], add_var):
    """Parse ``[+-] [num] name`` sequences; returns (coeffs, constant)."""
    coeffs: dict[int, float] = {}
    constant = 0.0
    sign = 1.0
    pending: float | None = None
    for tok in tokens:
        if tok == "+":
            if pending is not None:
                constant += sign * pending
                pending = None
            sign = 1.0
        elif tok == "-":
            if pending is not None:
                constant += sign * pending
                pending = None
            sign = -1.0
        else:
            try:
                value = float(tok)
            except ValueError:
                handle = var_index.get(tok)
                if handle is None:
                    handle = add_var(tok)
                coef = sign * (1.0 if pending is None else pending)
                coeffs[handle] = coeffs.get(handle, 0.0) + coef
                pending = None
                sign = 1.0
                continue
            if pending is not None:
                constant += sign * pending
                pending = None
                sign = 1.0
            pending = value
    if pending is not None:
        constant += sign * pending
    return coeffs, constant


def parse_lp(text: str) -> MipModel:
    """Parse LP text produced by :func:`export_lp` (and simple variants)."""
    model = MipModel()
    var_index: dict[str, int] = {}

    def ensure_var(name: str) -> int:
        if name not in var_index:
            var_index[name] = model.add_variable(name)
        return var_index[name]

    section = None
    sense = "min"
    pending_obj: list[str] = []
    pending_rows: list[tuple[str, list[str]]] = []
    row_tokens: list[str] | None = None
    row_name = ""

    for raw in text.splitlines():
        line = raw.split("\\")[0].strip()
        if not line:
            continue
        low = line.lower()
        if low in ("minimize", "minimum", "min"):
            section, sense = "objective", "min"
            continue
        if low in ("maximize", "maximum", "max"):
            section, sense = "objective", "max"
            continue
        if low in ("subject to", "st", "s.t.", "such that"):
            if row_tokens is not None:
                pending_rows.append((row_name, row_tokens))
            section, row_tokens = "rows", None
            continue
        if low == "bounds":
            if row_tokens is not None:
                pending_rows.append((row_name, row_tokens))
                row_tokens = None
            section = "bounds"
            continue
        if low in ("binaries", "binary", "bin"):
            section = "binaries"
            continue
        if low in ("generals", "general", "gen"):
            raise LpParseError("general integer variables are not supported")
        if low == "end":
            break

        tokens = _TOKEN.findall(line)
        if section == "objective":
            if tokens and tokens[0].endswith(":"):
                tokens = tokens[1:]
            pending_obj.extend(tokens)
        elif section == "rows":
            if tokens and tokens[0].endswith(":"):
                if row_tokens is not None:
                    pending_rows.append((row_name, row_tokens))
                row_name = tokens[0][:-1]
                row_tokens = tokens[1:]
            else:
                if row_tokens is None:
                    row_name, row_tokens = f"c{len(pending_rows)}", []
                row_tokens.extend(tokens)
        elif section == "bounds":
            if tokens[-1] == "free" if tokens else False:
                pass
            if len(tokens) >= 2 and tokens[-1].lower() == "free":
                handle = ensure_var(tokens[0])
                model.variables[handle].lb = -math.inf
                model.variables[handle].ub = math.inf
                continue
            # forms: "lo <= x <= hi", "x <= hi", "x >= lo"
            def bound_value(parts: list[str]) -> float:
                sgn = 1.0
                value = None
                for p in parts:
                    if p == "-":
                        sgn = -sgn
                    elif p == "+":
                        continue
                    else:
                        value = math.inf if p.lower() == "inf" else float(p)
                if value is None:
                    raise LpParseError(f"cannot parse bound in {line!r}")
                return sgn * value

            if "<=" in tokens:
                parts = _split_on(tokens, "<=")
                if len(parts) == 3:
                    handle = ensure_var(parts[1][0])
                    model.variables[handle].lb = bound_value(parts[0])
                    model.variables[handle].ub = bound_value(parts[2])
                elif len(parts) == 2:
                    handle = ensure_var(parts[0][0])
                    model.variables[handle].ub = bound_value(parts[1])
                else:
                    raise LpParseError(f"cannot parse bounds line {line!r}")
            elif ">=" in tokens:
                parts = _split_on(tokens, ">=")
                handle = ensure_var(parts[0][0])
                model.variables[handle].lb = bound_value(parts[1])
            elif "=" in tokens:
                parts = _split_on(tokens, "=")
                handle = ensure_var(parts[0][0])
                value = bound_value(parts[1])
                model.variables[handle].lb = value
                model.variables[handle].ub = value
            else:
                raise LpParseError(f"cannot parse bounds line {line!r}")
        elif section == "binaries":
            for tok in tokens:
                handle = ensure_var(tok)
                var = model.variables[handle]
                var.kind = BINARY
                var.lb, var.ub = 0.0, 1.0
        elif section is None:
            raise LpParseError(f"unexpected line before any section: {line!r}")

    if row_tokens is not None:
        pending_rows.append((row_name, row_tokens))

    coeffs, constant = _parse_terms(pending_obj, var_index, ensure_var)
    model.set_objective(coeffs, sense=sense, constant=constant)

    for name, tokens in pending_rows:
        sep = next((s for s in ("<=", ">=", "=") if s in tokens), None)
        if sep is None:
            raise LpParseError(f"constraint {name!r} has no sense")
        idx = tokens.index(sep)
        lhs, constant = _parse_terms(tokens[:idx], var_index, ensure_var)
        _, rhs = _parse_terms(tokens[idx + 1:], var_index, ensure_var)
        model.add_constraint(lhs, sep, rhs - constant, name=name)
    return model


def _split_on(tokens: list[str], sep: str) -> list[list[str]]:
    parts: list[list[str]] = [[]]
    for tok in tokens:
        if tok == sep:
            parts.append([])
        else:
            parts[-1].append(tok)
    return parts
