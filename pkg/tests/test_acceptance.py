"""Acceptance suite: one test per criterion, printing a pass/fail line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they
complete.  The two end-to-end criteria train real models and solve the
extensive form under a 600 s cap; their artifacts are cached under
``.acceptance/`` at the repo root, so a re-run reuses datasets and models
(delete the directory for a cold run).
"""

import itertools
import json
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from neur2sp.datagen import DatagenConfig, generate_dataset, load_mc_dataset
from neur2sp.experiment import ExperimentConfig, run_experiment
from neur2sp.milp import MipModel, SolveParams, solve
from neur2sp.nn_core import Scaler, backward, flat_params, forward, init_mlp
from neur2sp.problems import generate_instance
from neur2sp.relu_embed import InputBox, embed, propagate_bounds
from neur2sp.scenario_embedding import (init_single_cut, sc_loss_and_grads)
from neur2sp.surrogate import SurrogateSpec, build_sc_surrogate
from neur2sp.training import split_arrays, train_linear_baseline

ROOT = Path(__file__).resolve().parent.parent
CACHE = ROOT / ".acceptance"
WORKERS = min(8, os.cpu_count() or 1)
QUIET = SolveParams(collect_incumbents=False)

# desk-scale training depth for the end-to-end criteria (dataset sizes,
# search width, scenario counts and tolerances are fixed by the criteria)
MC_EPOCHS = 150
SC_EPOCHS = 60
SSLP_SC_EPOCHS = 60


@contextmanager
def criterion(number: int, description: str):
    start = time.time()
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {number}: FAIL - {description} "
              f"({time.time() - start:.1f}s)")
        raise
    print(f"\nACCEPTANCE {number}: PASS - {description} "
          f"({time.time() - start:.1f}s)")


def random_relu_net(rng, in_dim, widths):
    mlp = init_mlp([in_dim, *widths, 1], rng)
    for layer in mlp.layers:
        layer.b[:] = rng.normal(scale=0.5, size=layer.b.shape)
    return mlp


def test_criterion_1_embedding_exactness():
    with criterion(1, "MIP output equals forward pass within 1e-5 "
                      "(50 random nets, fixed inputs, < 2 min)"):
        rng = np.random.default_rng(101)
        start = time.time()
        for _ in range(50):
            n_hidden = int(rng.integers(1, 3))
            widths = [int(rng.integers(8, 65)) for _ in range(n_hidden)]
            in_dim = int(rng.integers(2, 6))
            mlp = random_relu_net(rng, in_dim, widths)
            x = rng.uniform(-2.0, 2.0, in_dim)
            model = MipModel()
            emb = embed(model, mlp, [None] * in_dim, InputBox(x, x))
            model.set_objective({emb.output: 1.0})
            res = solve(model, QUIET)
            assert res.status == "optimal"
            assert abs(res.objective - forward(mlp, x)[0]) <= 1e-5
        assert time.time() - start < 120.0


def fd_check_plain(rng) -> None:
    dims = [int(rng.integers(2, 5)), int(rng.integers(2, 6)),
            int(rng.integers(2, 6)), 1]
    mlp = init_mlp(dims, rng)
    for layer in mlp.layers:
        layer.b[:] = rng.normal(size=layer.b.shape)
    x = rng.normal(size=(3, dims[0]))
    y = rng.normal(size=3)
    l1, l2 = float(rng.choice([0.0, 0.01])), float(rng.choice([0.0, 0.01]))
    _, grads = backward(mlp, x, y, l1, l2)

    def loss():
        from neur2sp.nn_core import mse_loss, penalty_loss
        return mse_loss(forward(mlp, x), y[:, None]) + penalty_loss(mlp, l1, l2)

    h = 1e-5
    for (gw, gb), layer in zip(grads, mlp.layers):
        for arr, g in ((layer.w, gw), (layer.b, gb)):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + h
                up = loss()
                arr[idx] = old - h
                down = loss()
                arr[idx] = old
                fd = (up - down) / (2 * h)
                assert abs(g[idx] - fd) <= 1e-4 * max(1.0, abs(fd))


def fd_check_single_cut(rng) -> None:
    net = init_single_cut(2, 2, (4, 4, 3), 5, rng,
                          Scaler(rng.normal(size=4), rng.uniform(0.5, 2, 4),
                                 0.5, 1.5))
    for mlp in (net.psi1, net.psi2, net.phi):
        for layer in mlp.layers:
            layer.b[:] = rng.normal(size=layer.b.shape)
    batch = [(rng.normal(size=2), rng.normal(size=(k, 2)), np.full(k, 1.0 / k),
              float(rng.normal())) for k in (1, 2, 4)]
    _, grads = sc_loss_and_grads(net, batch, 0.01, 0.01)
    h = 1e-6
    for (w, b), (gw, gb) in zip(flat_params([net.psi1, net.psi2, net.phi]), grads):
        for arr, g in ((w, gw), (b, gb)):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + h
                up = sc_loss_and_grads(net, batch, 0.01, 0.01)[0]
                arr[idx] = old - h
                down = sc_loss_and_grads(net, batch, 0.01, 0.01)[0]
                arr[idx] = old
                fd = (up - down) / (2 * h)
                assert abs(g[idx] - fd) <= 1e-4 * max(1.0, abs(fd)) + 1e-7


def test_criterion_2_gradient_correctness():
    with criterion(2, "central finite differences at relative 1e-4 "
                      "(100 nets incl. set encoder, < 1 min)"):
        rng = np.random.default_rng(202)
        start = time.time()
        for _ in range(85):
            fd_check_plain(rng)
        for _ in range(15):
            fd_check_single_cut(rng)
        assert time.time() - start < 60.0


def test_criterion_3_bound_soundness():
    with criterion(3, "interval bounds contain 1000 sampled pre-activations "
                      "per net and tighten monotonically (< 30 s)"):
        rng = np.random.default_rng(303)
        start = time.time()
        for _ in range(20):
            in_dim = int(rng.integers(2, 6))
            widths = [int(rng.integers(4, 20)) for _ in range(int(rng.integers(1, 3)))]
            mlp = random_relu_net(rng, in_dim, widths)
            lo = rng.uniform(-2, 0, in_dim)
            hi = lo + rng.uniform(0.5, 2.5, in_dim)
            box = InputBox(lo, hi)
            bounds = propagate_bounds(mlp, box)
            h = rng.uniform(lo, hi, size=(1000, in_dim))
            for layer, (low, high) in zip(mlp.layers, bounds.pre):
                z = h @ layer.w + layer.b
                assert (z >= low - 1e-9).all() and (z <= high + 1e-9).all()
                h = np.maximum(z, 0.0) if layer.act == "relu" else z
            mid = (lo + hi) / 2
            shrunk = InputBox(lo + 0.25 * (mid - lo), hi - 0.25 * (hi - mid))
            tighter = propagate_bounds(mlp, shrunk)
            for (lw, uw), (ln, un) in zip(bounds.pre, tighter.pre):
                assert ((un - ln) <= (uw - lw) + 1e-12).all()
        assert time.time() - start < 30.0


def test_criterion_4_bruteforce_equivalence():
    with criterion(4, "4x4 facility EF optimum matches 2^4 enumeration with "
                      "per-scenario solves within 1e-6 relative (< 30 s)"):
        start = time.time()
        inst = generate_instance("cflp", n_facilities=4, n_customers=4, seed=3)
        scen = inst.sample_scenarios(3, seed=5)
        best = min(inst.evaluate_true_objective(np.array(bits), scen)
                   for bits in itertools.product((0.0, 1.0), repeat=4))
        ef = solve(inst.build_ef(scen), QUIET)
        assert ef.status == "optimal"
        assert abs(ef.objective - best) <= 1e-6 * max(1.0, abs(best))
        assert time.time() - start < 30.0


def test_criterion_5_invp_anchor():
    with criterion(5, "bundled investment instance: EF on the 4-point grid "
                      "equals -57.00 +- 0.01"):
        inst = generate_instance("invp", variant="B_E")
        res = solve(inst.build_ef(inst.sample_scenarios(4)), QUIET)
        assert res.status == "optimal"
        assert abs(res.objective - (-57.00)) <= 0.01


def test_criterion_6_sc_size_invariance():
    with criterion(6, "single-cut surrogate size identical at K=100 and "
                      "K=5000; solve times comparable and < 10 s"):
        rng = np.random.default_rng(606)
        inst = generate_instance("cflp", n_facilities=10, n_customers=10, seed=1)
        dim = inst.n_first_stage + inst.scenario_dim
        net = init_single_cut(inst.n_first_stage, inst.scenario_dim,
                              (64, 32, 16), 64, rng,
                              Scaler(rng.normal(size=dim),
                                     rng.uniform(0.5, 2.0, dim), 100.0, 50.0))
        built, times = {}, {}
        for k in (100, 5000):
            spec = SurrogateSpec("sc", net, inst, inst.sample_scenarios(k, seed=7))
            built[k] = build_sc_surrogate(spec)
            runs = []
            for _ in range(3):
                model = build_sc_surrogate(spec).model
                runs.append(solve(model, QUIET).wall_time)
            times[k] = min(runs)
        assert built[100].sizes == built[5000].sizes
        # 10 ms floor absorbs timer noise on solves this small
        assert times[5000] <= 2.0 * max(times[100], 0.01)
        assert times[5000] < 10.0 and times[100] < 10.0


@pytest.fixture(scope="module")
def cflp_pipeline():
    config = ExperimentConfig(
        problem="cflp",
        problem_params={"n_facilities": 10, "n_customers": 10, "seed": 1},
        scenario_counts=[100], scenario_seed=7, modes=["sc", "mc", "lr"],
        mc_samples=10000, sc_samples=5000, k_prime_max=100, n_configs=25,
        mc_epochs=MC_EPOCHS, sc_epochs=SC_EPOCHS,
        ef_time_limit=600.0, surrogate_time_limit=600.0,
        seed=0, workers=WORKERS, out_dir=str(CACHE / "cflp_10_10"))
    out = run_experiment(config)
    raw = json.loads((out / "raw_CFLP_10_10_100.json").read_text())
    return config, out, raw


def _diff_pct(raw, mode):
    ef_obj = raw["ef"]["objective"]
    true = raw["methods"][mode]["true_objective"]
    return 100.0 * (true - ef_obj) / abs(ef_obj)


def test_criterion_7_cflp_end_to_end(cflp_pipeline):
    with criterion(7, "seeded 10x10 facility pipeline (10k/5k samples, "
                      "25-config search): SC and MC within 8% of EF at 600 s"):
        _, _, raw = cflp_pipeline
        assert raw["ef"]["objective"] is not None
        sc_diff = _diff_pct(raw, "sc")
        mc_diff = _diff_pct(raw, "mc")
        print(f"\n  EF {raw['ef']['objective']:.2f} ({raw['ef']['status']}); "
              f"SC diff {sc_diff:+.2f}%, MC diff {mc_diff:+.2f}%")
        assert sc_diff <= 8.0
        assert mc_diff <= 8.0


def test_criterion_7b_training_invariants(cflp_pipeline):
    with criterion(7, "selected per-scenario model fits validation labels "
                      "to 0.25 label-std; linear baseline does not beat it"):
        config, out, _ = cflp_pipeline
        x, y = load_mc_dataset(out / "data_mc.jsonl")
        x_tr, y_tr, x_va, y_va = split_arrays(x, y, 0.8, seed=config.seed)
        import csv
        with open(out / "leaderboard_mc.csv") as fh:
            board = list(csv.DictReader(fh))
        best_mae = min(float(row["val_mae"]) for row in board)
        assert best_mae <= 0.25 * float(np.std(y_va))

        lin = train_linear_baseline(x_tr, y_tr)
        lr_mae = float(np.mean(np.abs(lin.predict(x_va) - y_va)))
        assert lr_mae >= best_mae


def test_criterion_9_lr_ordering(cflp_pipeline):
    with criterion(9, "linear-baseline surrogate yields a worse true "
                      "objective than both network surrogates"):
        _, _, raw = cflp_pipeline
        lr_true = raw["methods"]["lr"]["true_objective"]
        assert lr_true > raw["methods"]["sc"]["true_objective"]
        assert lr_true > raw["methods"]["mc"]["true_objective"]


def test_criterion_8_sslp_end_to_end():
    with criterion(8, "generated 5x25 server-location pipeline: SC within "
                      "5% of EF at 600 s (K=50)"):
        config = ExperimentConfig(
            problem="sslp",
            problem_params={"n_servers": 5, "m_clients": 25, "seed": 1},
            scenario_counts=[50], scenario_seed=7, modes=["sc"],
            sc_samples=5000, k_prime_max=50, n_configs=10,
            sc_epochs=SSLP_SC_EPOCHS,
            ef_time_limit=600.0, surrogate_time_limit=600.0,
            seed=0, workers=WORKERS, out_dir=str(CACHE / "sslp_5_25"))
        out = run_experiment(config)
        raw = json.loads((out / "raw_SSLP_5_25_50.json").read_text())
        assert raw["ef"]["objective"] is not None
        sc_diff = _diff_pct(raw, "sc")
        print(f"\n  EF {raw['ef']['objective']:.2f} ({raw['ef']['status']}); "
              f"SC diff {sc_diff:+.2f}%")
        assert sc_diff <= 5.0


def test_criterion_10_datagen_determinism(tmp_path):
    with criterion(10, "dataset content identical for worker counts 1/4/8"):
        inst = generate_instance("cflp", n_facilities=10, n_customers=10, seed=1)
        texts = []
        for workers in (1, 4, 8):
            path = tmp_path / f"mc_w{workers}.jsonl"
            generate_dataset(inst, DatagenConfig("mc", 24, base_seed=17,
                                                 workers=workers), path)
            texts.append(path.read_text())
        assert texts[0] == texts[1] == texts[2]
