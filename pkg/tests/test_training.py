import csv

import numpy as np
import pytest

from neur2sp.nn_core import train
from neur2sp.training import (LinearModel, RandomSearchError,
                              SearchSpace, default_space, random_search, split,
                              split_arrays, train_linear_baseline,
                              write_leaderboard)


def linear_dataset(rng, n=200, d=4):
    w = rng.normal(size=d)
    x = rng.uniform(-1, 1, (n, d))
    return x, x @ w + 0.7, w


def test_split_sizes_and_determinism():
    items = list(range(10))
    tr, va = split(items, 0.8, seed=1)
    assert len(tr) == 8 and len(va) == 2
    assert sorted(tr + va) == items
    tr2, va2 = split(items, 0.8, seed=1)
    assert tr == tr2 and va == va2
    tr3, _ = split(items, 0.8, seed=2)
    assert tr != tr3


def test_split_rejects_degenerate_ratio():
    with pytest.raises(ValueError):
        split(list(range(10)), 1.0)
    with pytest.raises(ValueError):
        split(list(range(10)), 0.0)


def test_split_arrays_partition(rng):
    x = rng.normal(size=(20, 3))
    y = rng.normal(size=20)
    x_tr, y_tr, x_va, y_va = split_arrays(x, y, 0.8, seed=0)
    assert len(y_tr) == 16 and len(y_va) == 4
    joined = np.sort(np.concatenate([y_tr, y_va]))
    assert np.allclose(joined, np.sort(y))


def test_space_samples_stay_in_ranges():
    space = default_space("sc")
    rng = np.random.default_rng(0)
    for _ in range(50):
        cfg = space.sample(rng, seed=1)
        assert cfg.batch_size in space.batch_sizes
        assert space.lr_range[0] <= cfg.learning_rate <= space.lr_range[1]
        assert space.l1_range[0] <= cfg.l1_penalty <= space.l1_range[1]
        assert cfg.optimizer in space.optimizers
        assert 0.0 <= cfg.dropout_rate <= 0.5
        assert cfg.epochs == 2000
        assert cfg.relu_hidden_dim in space.relu_hidden
        assert cfg.embed_dim_1 in space.embed_dims_1


def test_single_config_search_equals_plain_train(rng):
    x, y, _ = linear_dataset(rng)
    space = SearchSpace("mc", epochs=8, relu_hidden=(8,))
    net, board = random_search((x, y), space, n_configs=1, seed=3)

    # replay the search's own sampling and split
    replay = np.random.default_rng(3)
    seeds = replay.integers(0, 2 ** 31, 1)
    cfg = space.sample(replay, int(seeds[0]))
    x_tr, y_tr, x_va, y_va = split_arrays(x, y, 0.8, seed=3)
    direct, _ = train([x.shape[1], cfg.relu_hidden_dim], x_tr, y_tr, cfg,
                      x_va, y_va, abort_threshold=10 * float(np.std(y_va)))
    assert board[0]["val_mae"] == pytest.approx(direct.meta["val_mae"])
    for a, b in zip(net.mlp.layers, direct.mlp.layers):
        assert np.array_equal(a.w, b.w)


def test_search_best_not_worse_than_median(rng):
    x, y, _ = linear_dataset(rng, n=120)
    space = SearchSpace("mc", epochs=6, relu_hidden=(4, 8))
    net, board = random_search((x, y), space, n_configs=5, seed=0)
    maes = [row["val_mae"] for row in board]
    assert min(maes) == net.meta["val_mae"]
    assert net.meta["val_mae"] <= np.median(maes)


def test_search_reproducible(rng):
    x, y, _ = linear_dataset(rng, n=80)
    space = SearchSpace("mc", epochs=5, relu_hidden=(6,))
    n1, b1 = random_search((x, y), space, n_configs=3, seed=7)
    n2, b2 = random_search((x, y), space, n_configs=3, seed=7)
    assert n1.meta["config_id"] == n2.meta["config_id"]
    strip = lambda board: [{k: v for k, v in r.items() if k != "wall_s"}
                           for r in board]
    assert strip(b1) == strip(b2)
    for a, b in zip(n1.mlp.layers, n2.mlp.layers):
        assert np.array_equal(a.w, b.w)


def test_search_parallel_matches_serial(rng):
    x, y, _ = linear_dataset(rng, n=80)
    space = SearchSpace("mc", epochs=4, relu_hidden=(6,))
    n1, b1 = random_search((x, y), space, n_configs=4, seed=2, workers=1)
    n2, b2 = random_search((x, y), space, n_configs=4, seed=2, workers=2)
    assert [r["val_mae"] for r in b1] == [r["val_mae"] for r in b2]
    for a, b in zip(n1.mlp.layers, n2.mlp.layers):
        assert np.array_equal(a.w, b.w)


def test_leaderboard_csv_sorted(tmp_path):
    rows = [{"config_id": 0, "val_mae": 3.0, "wall_s": 1.0},
            {"config_id": 1, "val_mae": 1.0, "wall_s": 1.0},
            {"config_id": 2, "val_mae": float("inf"), "wall_s": 1.0}]
    path = tmp_path / "board.csv"
    write_leaderboard(path, rows)
    with open(path) as fh:
        loaded = list(csv.DictReader(fh))
    maes = [float(r["val_mae"]) for r in loaded]
    assert maes == sorted(maes)


def test_all_divergent_raises_with_leaderboard(rng):
    x, y, _ = linear_dataset(rng, n=60)
    y = y * 1e4
    space = SearchSpace("mc", epochs=8, relu_hidden=(8,),
                        lr_range=(1e7, 1e7), optimizers=("rmsprop",),
                        l1_range=(0.0, 0.0), l2_range=(0.0, 0.0))
    with pytest.raises(RandomSearchError) as err:
        random_search((x, y), space, n_configs=2, seed=0)
    assert len(err.value.leaderboard) == 2
    assert all(row["val_mae"] == float("inf") for row in err.value.leaderboard)


# -- linear baseline ------------------------------------------------------------


def test_lr_recovers_linear_function(rng):
    x, y, w = linear_dataset(rng, n=300)
    model = train_linear_baseline(x, y)
    w_raw, b_raw = model.raw_coefficients()
    assert np.allclose(w_raw, w, atol=1e-6)
    assert b_raw == pytest.approx(0.7, abs=1e-6)
    x_new = rng.uniform(-1, 1, (50, 4))
    assert np.abs(model.predict(x_new) - (x_new @ w + 0.7)).mean() <= 1e-6


def test_lr_constant_labels(rng):
    x = rng.normal(size=(40, 3))
    model = train_linear_baseline(x, np.full(40, 4.2))
    assert np.allclose(model.w, 0.0, atol=1e-9)
    assert model.b == pytest.approx(4.2)


def test_lr_rank_deficiency_noted(rng):
    x = rng.normal(size=(30, 2))
    x = np.hstack([x, x[:, :1]])  # duplicated column
    model = train_linear_baseline(x, x[:, 0] * 2.0)
    assert model.meta.get("rank_deficient") is True
    assert np.isfinite(model.w).all()


def test_lr_serialization_roundtrip(rng):
    x, y, _ = linear_dataset(rng, n=50)
    model = train_linear_baseline(x, y)
    clone = LinearModel.from_json(model.to_json())
    assert np.allclose(clone.w, model.w)
    assert clone.b == pytest.approx(model.b)
    probe = rng.normal(size=(5, 4))
    assert np.allclose(clone.predict(probe), model.predict(probe))
