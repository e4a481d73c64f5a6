import itertools
import math

import numpy as np
import pytest

from neur2sp.milp import (BINARY, MipModel, MipUsageError,
                          SolveParams, export_lp, get_backend, parse_lp, solve)


def brute_force_binary(model: MipModel):
    """Oracle: exhaustive enumeration over all binary assignments."""
    handles = list(range(model.n_variables))
    assert all(v.kind == BINARY for v in model.variables)
    best = None
    for bits in itertools.product((0.0, 1.0), repeat=len(handles)):
        values = np.array(bits)
        if model.constraint_violation(values) > 1e-9:
            continue
        obj = model.objective_value(values)
        if best is None:
            best = obj
        elif model.objective_sense == "min":
            best = min(best, obj)
        else:
            best = max(best, obj)
    return best


def test_empty_model_single_var(quiet_params):
    m = MipModel()
    m.add_variable("x", lb=0.0, ub=1.0)
    m.set_objective({})
    res = solve(m, quiet_params)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(0.0)


def test_min_max_box(quiet_params):
    m = MipModel()
    x = m.add_variable("x", lb=0.0, ub=1.0)
    m.set_objective({x: 1.0})
    assert solve(m, quiet_params).objective == pytest.approx(0.0)
    m.set_objective({x: 1.0}, sense="max")
    assert solve(m, quiet_params).objective == pytest.approx(1.0)


def test_duplicate_constraint_kept():
    m = MipModel()
    x = m.add_variable("x")
    m.add_constraint({x: 1.0}, "<=", 2.0)
    m.add_constraint({x: 1.0}, "<=", 2.0)
    assert m.n_constraints == 2


def test_simple_lp(quiet_params):
    m = MipModel()
    x = m.add_variable("x", lb=0, ub=5)
    y = m.add_variable("y", lb=0, ub=5)
    m.add_constraint({x: 1.0, y: 1.0}, ">=", 3.0)
    m.set_objective({x: 1.0, y: 1.0})
    res = solve(m, quiet_params)
    assert res.objective == pytest.approx(3.0)


def test_tiny_knapsack(quiet_params):
    m = MipModel()
    a = m.add_binary("a")
    b = m.add_binary("b")
    m.add_constraint({a: 1.0, b: 1.0}, "<=", 1.0)
    m.set_objective({a: 2.0, b: 3.0}, sense="max")
    res = solve(m, quiet_params)
    assert res.objective == pytest.approx(3.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_binary_milp_matches_enumeration(seed, quiet_params):
    rng = np.random.default_rng(seed)
    m = MipModel()
    handles = [m.add_binary(f"b{i}") for i in range(10)]
    for _ in range(5):
        coeffs = {h: float(rng.integers(-4, 5)) for h in handles}
        m.add_constraint(coeffs, "<=", float(rng.integers(0, 8)))
    m.set_objective({h: float(rng.normal()) for h in handles})
    expected = brute_force_binary(m)
    res = solve(m, quiet_params)
    if expected is None:
        assert res.status == "infeasible"
    else:
        assert res.status == "optimal"
        assert res.objective == pytest.approx(expected, abs=1e-9)
        assert m.constraint_violation(res.values) <= 1e-6


def test_solution_feasibility_audited(quiet_params, tiny_cflp):
    scen = tiny_cflp.sample_scenarios(3, seed=0)
    model = tiny_cflp.build_ef(scen)
    res = solve(model, quiet_params)
    assert res.status == "optimal"
    # independent float evaluator, not the backend's own report
    assert model.constraint_violation(res.values) <= 1e-6


def test_infeasible_and_unbounded(quiet_params):
    m = MipModel()
    x = m.add_variable("x", lb=0.0, ub=1.0)
    m.add_constraint({x: 1.0}, ">=", 2.0)
    m.set_objective({x: 1.0})
    assert solve(m, quiet_params).status == "infeasible"

    m2 = MipModel()
    y = m2.add_variable("y", lb=-math.inf, ub=math.inf)
    m2.set_objective({y: 1.0})
    assert solve(m2, quiet_params).status == "unbounded"


def test_incumbents_monotone(tiny_cflp):
    scen = tiny_cflp.sample_scenarios(8, seed=1)
    model = tiny_cflp.build_ef(scen)
    res = solve(model, SolveParams(collect_incumbents=True))
    assert res.status == "optimal"
    assert len(res.incumbents) >= 1
    times = [t for t, _ in res.incumbents]
    objs = [o for _, o in res.incumbents]
    assert times == sorted(times)
    assert objs == sorted(objs, reverse=True)  # improving, min sense
    assert objs[-1] == pytest.approx(res.objective, rel=1e-6)


def test_time_limit_status():
    # generous limit on an easy model still reports optimal
    m = MipModel()
    x = m.add_binary("x")
    m.set_objective({x: -1.0})
    res = solve(m, SolveParams(time_limit=10.0, collect_incumbents=False))
    assert res.status == "optimal"
    assert res.objective == pytest.approx(-1.0)


def test_solve_deterministic(tiny_cflp):
    scen = tiny_cflp.sample_scenarios(5, seed=2)
    params = SolveParams(seed=3, threads=1, collect_incumbents=False)
    r1 = solve(tiny_cflp.build_ef(scen), params)
    r2 = solve(tiny_cflp.build_ef(scen), params)
    assert r1.objective == r2.objective


def test_usage_errors():
    m = MipModel()
    with pytest.raises(MipUsageError):
        m.add_variable("x", lb=2.0, ub=1.0)
    x = m.add_variable("x")
    with pytest.raises(MipUsageError):
        m.add_constraint({x + 5: 1.0}, "<=", 1.0)
    with pytest.raises(MipUsageError):
        m.add_constraint({x: 1.0}, "<<", 1.0)
    with pytest.raises(MipUsageError):
        m.set_objective({x: float("nan")})
    with pytest.raises(MipUsageError):
        m.add_variable("x")  # duplicate name


def test_backend_selection(monkeypatch):
    assert get_backend("highs").name == "highs"
    monkeypatch.setenv("NEUR2SP_SOLVER", "highs")
    assert get_backend().name == "highs"
    monkeypatch.setenv("NEUR2SP_SOLVER", "does-not-exist")
    with pytest.raises(MipUsageError, match="unknown solver backend"):
        get_backend()


# -- LP export/import ---------------------------------------------------------


def test_export_lp_bounds_section():
    m = MipModel()
    m.add_variable("x", lb=-1.5, ub=2.5)
    m.set_objective({0: 1.0})
    text = export_lp(m)
    assert "Bounds" in text
    assert "-1.5 <= x <= 2.5" in text


def test_export_lp_binaries_section():
    m = MipModel()
    m.add_binary("flip")
    m.set_objective({0: 1.0})
    text = export_lp(m)
    assert "Binaries" in text
    assert "flip" in text.split("Binaries")[1]


@pytest.mark.parametrize("seed", [0, 7])
def test_lp_roundtrip_preserves_objective(seed, quiet_params):
    rng = np.random.default_rng(seed)
    m = MipModel()
    xs = [m.add_variable(f"x{i}", lb=0, ub=3) for i in range(3)]
    bs = [m.add_binary(f"b{i}") for i in range(3)]
    for _ in range(4):
        coeffs = {h: float(rng.integers(-3, 4)) for h in xs + bs}
        m.add_constraint(coeffs, rng.choice(["<=", ">="]),
                         float(rng.integers(1, 6)))
    m.set_objective({h: float(rng.normal()) for h in xs + bs}, constant=1.25)
    direct = solve(m, quiet_params)
    reread = parse_lp(export_lp(m))
    assert reread.n_variables == m.n_variables
    assert reread.n_binaries == m.n_binaries
    again = solve(reread, quiet_params)
    assert again.status == direct.status
    if direct.status == "optimal":
        assert again.objective == pytest.approx(direct.objective, abs=1e-8)


def test_parse_lp_free_variable(quiet_params):
    m = MipModel()
    m.add_variable("z", lb=-math.inf, ub=math.inf)
    m.add_constraint({0: 1.0}, ">=", -4.0)
    m.set_objective({0: 1.0})
    text = export_lp(m)
    assert "z free" in text
    back = parse_lp(text)
    res = solve(back, quiet_params)
    assert res.objective == pytest.approx(-4.0)
