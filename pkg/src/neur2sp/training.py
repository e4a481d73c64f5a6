"""Model-selection pipeline: dataset split, random hyperparameter search
over the standard space, and the linear-regression baseline.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .nn_core import Scaler, TrainConfig, TrainingDiverged, train
from .scenario_embedding import ScTrainConfig, train_single_cut


class RandomSearchError(RuntimeError):
    """Every sampled configuration diverged; carries the leaderboard."""

    def __init__(self, message: str, leaderboard: list[dict]):
        super().__init__(message)
        self.leaderboard = leaderboard


def split(items, ratio: float = 0.8, seed: int = 0):
    """Disjoint (train, val) split of a sequence, deterministic per seed."""
    n = len(items)
    if n < 5:
        raise ValueError("need at least 5 samples to split")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be strictly inside (0, 1)")
    order = np.random.default_rng(seed).permutation(n)
    n_tr = int(round(ratio * n))
    n_tr = min(max(n_tr, 1), n - 1)
    pick = lambda idx: items[idx] if isinstance(items, np.ndarray) \
        else [items[i] for i in idx]
    return pick(order[:n_tr]), pick(order[n_tr:])


def split_arrays(x: np.ndarray, y: np.ndarray, ratio: float = 0.8, seed: int = 0):
    tr, va = split(np.arange(len(y)), ratio, seed)
    return x[tr], y[tr], x[va], y[va]


@dataclass
class SearchSpace:
    """Hyperparameter ranges for random search (one model family)."""

    mode: str  # "mc" | "sc"
    batch_sizes: tuple = (16, 32, 64, 128)
    lr_range: tuple = (1e-5, 1e-1)
    l1_range: tuple = (1e-5, 1e-1)
    l2_range: tuple = (1e-5, 1e-1)
    optimizers: tuple = ("adam", "adagrad", "rmsprop")
    dropout_range: tuple = (0.0, 0.5)
    epochs: int = 1000
    relu_hidden: tuple = (32, 64)
    embed_dims_1: tuple = (64, 128, 256, 512)
    embed_dims_2: tuple = (16, 32, 64, 128)
    embed_dims_3: tuple = (8, 16, 32, 64)

    def sample(self, rng: np.random.Generator, seed: int):
        base = dict(
            batch_size=int(rng.choice(self.batch_sizes)),
            learning_rate=float(rng.uniform(*self.lr_range)),
            l1_penalty=float(rng.uniform(*self.l1_range)),
            l2_penalty=float(rng.uniform(*self.l2_range)),
            optimizer=str(rng.choice(self.optimizers)),
            dropout_rate=float(rng.uniform(*self.dropout_range)),
            epochs=self.epochs, seed=seed)
        if self.mode == "mc":
            return McTrainConfig(**base, relu_hidden_dim=int(rng.choice(self.relu_hidden)))
        return ScTrainConfig(**base,
                             relu_hidden_dim=int(rng.choice(self.relu_hidden)),
                             embed_dim_1=int(rng.choice(self.embed_dims_1)),
                             embed_dim_2=int(rng.choice(self.embed_dims_2)),
                             embed_dim_3=int(rng.choice(self.embed_dims_3)))


@dataclass
class McTrainConfig(TrainConfig):
    relu_hidden_dim: int = 64


def default_space(mode: str, epochs: int | None = None) -> SearchSpace:
    if mode == "mc":
        return SearchSpace("mc", epochs=epochs if epochs is not None else 1000,
                           relu_hidden=(32, 64))
    if mode == "sc":
        return SearchSpace("sc", epochs=epochs if epochs is not None else 2000,
                           relu_hidden=(64, 128, 256, 512))
    raise ValueError(f"mode must be 'mc' or 'sc', got {mode!r}")


def _config_row(config) -> dict:
    row = {k: v for k, v in vars(config).items()}
    row["optimizer"] = str(row["optimizer"])
    return row


def _search_job(job):
    mode, train_data, val_data, config, guard = job
    start = time.perf_counter()
    try:
        if mode == "mc":
            x_tr, y_tr = train_data
            x_va, y_va = val_data
            dims = [x_tr.shape[1], config.relu_hidden_dim]
            net, history = train(dims, x_tr, y_tr, config, x_va, y_va,
                                 abort_threshold=guard)
            val_mae = float(net.meta.get("val_mae"))
        else:
            net, history = train_single_cut(train_data, config, val_data,
                                            abort_threshold=guard)
            val_mae = float(net.meta.get("val_mae"))
        return net, val_mae, time.perf_counter() - start, None
    except TrainingDiverged as exc:
        return None, float("inf"), time.perf_counter() - start, str(exc)


def random_search(dataset, space: SearchSpace, n_configs: int = 100,
                  seed: int = 0, workers: int = 1, val_ratio: float = 0.8):
    """Train ``n_configs`` sampled configurations, return the one with the
    lowest validation MAE plus the full leaderboard.

    ``dataset`` is (features, labels) for the per-scenario model and a list
    of (x, scenarios, probs, label) tuples for the set model.  A config is
    abandoned early if its epoch-5 validation MAE exceeds ten label
    standard deviations.
    """
    if n_configs < 1:
        raise ValueError("n_configs must be >= 1")
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2 ** 31, n_configs)
    configs = [space.sample(rng, int(s)) for s in seeds]

    if space.mode == "mc":
        x, y = dataset
        x_tr, y_tr, x_va, y_va = split_arrays(np.asarray(x), np.asarray(y),
                                              val_ratio, seed)
        train_data, val_data = (x_tr, y_tr), (x_va, y_va)
        guard = 10.0 * float(np.std(y_va)) if np.std(y_va) > 0 else None
    else:
        train_data, val_data = split(list(dataset), val_ratio, seed)
        val_labels = np.array([s[3] for s in val_data])
        guard = 10.0 * float(val_labels.std()) if val_labels.std() > 0 else None

    jobs = [(space.mode, train_data, val_data, cfg, guard) for cfg in configs]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_search_job, jobs))
    else:
        outcomes = [_search_job(job) for job in jobs]

    leaderboard = []
    best_net, best_mae, best_id = None, float("inf"), None
    for i, (config, (net, val_mae, wall, error)) in enumerate(zip(configs, outcomes)):
        row = {"config_id": i, **_config_row(config),
               "val_mae": val_mae, "wall_s": wall}
        if error:
            row["error"] = error
        leaderboard.append(row)
        if net is not None and val_mae < best_mae:
            best_net, best_mae, best_id = net, val_mae, i
    if best_net is None:
        raise RandomSearchError("all configurations diverged", leaderboard)
    best_net.meta.update({"config_id": best_id, "search_seed": seed,
                          "n_configs": n_configs})
    return best_net, leaderboard


def write_leaderboard(path, leaderboard: list[dict]) -> None:
    """Persist the leaderboard as CSV, best (lowest val MAE) first."""
    rows = sorted(leaderboard, key=lambda r: (r["val_mae"] != r["val_mae"],
                                              r["val_mae"]))
    keys: list[str] = []
    for row in rows:
        for key in row:
            if key not in keys:
                keys.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


# -- linear baseline -----------------------------------------------------------


@dataclass
class LinearModel:
    """Ordinary least squares on standardized features (tiny ridge for
    conditioning); embeddable as a purely linear objective."""

    w: np.ndarray
    b: float
    scaler: Scaler
    meta: dict = field(default_factory=dict)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.scaler.scale_x(x) @ self.w + self.b

    def raw_coefficients(self):
        """(w, b) acting on unscaled features."""
        w_raw = self.w / self.scaler.x_std
        return w_raw, float(self.b - self.scaler.x_mean @ w_raw)

    def to_json(self) -> str:
        return json.dumps({"version": 1, "kind": "lr", "w": self.w.tolist(),
                           "b": self.b,
                           "scaler": {"x_mean": self.scaler.x_mean.tolist(),
                                      "x_std": self.scaler.x_std.tolist(),
                                      "y_mean": self.scaler.y_mean,
                                      "y_std": self.scaler.y_std},
                           "meta": self.meta})

    @classmethod
    def from_json(cls, text: str) -> "LinearModel":
        from .nn_core import ModelFormatError, _load_model_dict, scaler_from_json
        data = _load_model_dict(text)
        if data.get("kind") != "lr":
            raise ModelFormatError(f"kind: expected 'lr', got {data.get('kind')!r}")
        return cls(np.asarray(data["w"], dtype=float), float(data["b"]),
                   scaler_from_json(data["scaler"]), data.get("meta", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "LinearModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


def train_linear_baseline(x: np.ndarray, y: np.ndarray,
                          ridge: float = 1e-8) -> LinearModel:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    scaler = Scaler.fit(x, y)
    xs = scaler.scale_x(x)
    gram = xs.T @ xs + ridge * np.eye(xs.shape[1])
    w = np.linalg.solve(gram, xs.T @ (y - y.mean()))
    meta = {"ridge": ridge, "n_samples": len(y)}
    rank = np.linalg.matrix_rank(xs)
    if rank < xs.shape[1]:
        meta["rank_deficient"] = True
    return LinearModel(w, float(y.mean()), scaler, meta)
