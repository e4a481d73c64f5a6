import json
from dataclasses import dataclass, field

import numpy as np
import pytest
from scipy import stats

from neur2sp.datagen import (DatagenConfig, generate_dataset, load_mc_dataset,
                             load_sc_dataset, sample_record)
from neur2sp.milp import BINARY, CONTINUOUS, MipModel, SolveParams, solve
from neur2sp.problems import SecondStageError, TwoStageProblem


@dataclass
class StubProblem(TwoStageProblem):
    """Instant second stage (label = sum of the scenario) for distribution
    and plumbing tests that should not pay for MILP solves."""

    dim: int = 2
    fail_indices: tuple = field(default_factory=tuple)
    _count: int = 0
    name: str = "stub"

    @property
    def n_first_stage(self):
        return self.dim

    @property
    def first_stage_cost(self):
        return np.zeros(self.dim)

    @property
    def first_stage_kinds(self):
        return [CONTINUOUS] * self.dim

    @property
    def first_stage_bounds(self):
        return [(0.0, 1.0)] * self.dim

    def add_first_stage(self, model):
        return [model.add_variable(f"x{i}", lb=0, ub=1) for i in range(self.dim)]

    def add_second_stage(self, model, x, xi, weight, tag="s"):
        raise NotImplementedError

    @property
    def scenario_dim(self):
        return self.dim

    def sample_scenario(self, rng):
        return rng.uniform(0.0, 1.0, self.dim)

    def sample_first_stage(self, rng):
        return rng.uniform(0.0, 1.0, self.dim)

    def second_stage_value(self, x, xi, solve_params=None):
        self._count += 1
        if self._count in self.fail_indices:
            raise SecondStageError("synthetic failure")
        return float(np.sum(xi))

    def to_dict(self):
        return {"class": "stub", "dim": self.dim}


def test_mc_record_label_matches_resolve(tiny_cflp):
    rec = sample_record(tiny_cflp, "mc", base_seed=3, index=7)
    q = tiny_cflp.second_stage_value(np.array(rec["x"]), np.array(rec["xi"]))
    assert rec["y"] == pytest.approx(q, abs=1e-6)


def test_sc_record_k1_equals_q(tiny_cflp):
    for index in range(30):
        rec = sample_record(tiny_cflp, "sc", base_seed=11, index=index,
                            k_prime_max=1)
        assert len(rec["xis"]) == 1
        q = tiny_cflp.second_stage_value(np.array(rec["x"]),
                                         np.array(rec["xis"][0]))
        assert rec["y"] == pytest.approx(q, abs=1e-6)


def test_sc_record_label_is_probability_weighted_mean(tiny_cflp):
    rec = sample_record(tiny_cflp, "sc", base_seed=5, index=2, k_prime_max=6)
    qs = [tiny_cflp.second_stage_value(np.array(rec["x"]), np.array(xi))
          for xi in rec["xis"]]
    assert rec["y"] == pytest.approx(np.dot(rec["p"], qs), abs=1e-6)
    assert np.sum(rec["p"]) == pytest.approx(1.0)


@pytest.mark.parametrize("workers", [1, 4, 8])
def test_worker_count_does_not_change_content(tmp_path, tiny_cflp, workers):
    path = tmp_path / f"w{workers}.jsonl"
    generate_dataset(tiny_cflp, DatagenConfig("mc", 12, base_seed=21,
                                              workers=workers), path)
    reference = tmp_path / "ref.jsonl"
    if not reference.exists():
        generate_dataset(tiny_cflp, DatagenConfig("mc", 12, base_seed=21,
                                                  workers=1), reference)
    assert path.read_text() == reference.read_text()


def test_cflp_open_rate_covers_half(tiny_cflp):
    rng = np.random.default_rng(0)
    draws = np.stack([tiny_cflp.sample_first_stage(rng) for _ in range(10000)])
    assert set(np.unique(draws)) <= {0.0, 1.0}
    assert 0.45 <= draws.mean() <= 0.55


def test_invp_first_stage_box(invp_be):
    rng = np.random.default_rng(1)
    draws = np.stack([invp_be.sample_first_stage(rng) for _ in range(2000)])
    assert draws.min() >= 0.0 and draws.max() <= 5.0
    assert draws.mean() == pytest.approx(2.5, abs=0.15)


def test_sc_cardinalities_uniform(tmp_path):
    stub = StubProblem()
    path = tmp_path / "sc.jsonl"
    generate_dataset(stub, DatagenConfig("sc", 5000, k_prime_max=10,
                                         base_seed=2), path)
    counts = np.zeros(10)
    for line in path.read_text().splitlines():
        counts[len(json.loads(line)["xis"]) - 1] += 1
    assert stats.chisquare(counts).pvalue > 0.001


def test_failed_samples_skipped_and_counted(tmp_path):
    stub = StubProblem(fail_indices=(3,))
    out = generate_dataset(stub, DatagenConfig("mc", 10, base_seed=0), tmp_path / "d.jsonl")
    assert out.written == 9
    assert out.skipped == 1
    assert len((tmp_path / "d.jsonl").read_text().splitlines()) == 9


def test_labels_bound_by_lp_relaxation(tmp_path, tiny_cflp):
    path = tmp_path / "mc.jsonl"
    generate_dataset(tiny_cflp, DatagenConfig("mc", 40, base_seed=7), path)
    checked = 0
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        model = MipModel()
        tiny_cflp.add_second_stage(model, np.array(rec["x"]),
                                   np.array(rec["xi"]), 1.0)
        for var in model.variables:  # relax to the LP bound
            if var.kind == BINARY:
                var.kind = CONTINUOUS
        lp = solve(model, SolveParams(collect_incumbents=False))
        assert rec["y"] >= lp.objective - 1e-6
        checked += 1
    assert checked == 40


def test_loaders(tmp_path, tiny_cflp):
    mc_path = tmp_path / "mc.jsonl"
    generate_dataset(tiny_cflp, DatagenConfig("mc", 8, base_seed=1), mc_path)
    x, y = load_mc_dataset(mc_path)
    assert x.shape == (8, tiny_cflp.n_first_stage + tiny_cflp.scenario_dim)
    assert y.shape == (8,)

    sc_path = tmp_path / "sc.jsonl"
    generate_dataset(tiny_cflp, DatagenConfig("sc", 5, k_prime_max=4,
                                              base_seed=1), sc_path)
    samples = load_sc_dataset(sc_path)
    assert len(samples) == 5
    for x_, xis, p, y_ in samples:
        assert xis.shape[1] == tiny_cflp.scenario_dim
        assert p.sum() == pytest.approx(1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        DatagenConfig("bad", 10).validate()
    with pytest.raises(ValueError):
        DatagenConfig("mc", 0).validate()
    with pytest.raises(ValueError):
        DatagenConfig("sc", 10, k_prime_max=0).validate()
