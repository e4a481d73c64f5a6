"""Dense feedforward ReLU networks with from-scratch training.

Everything is plain numpy: forward/backward passes, MSE loss with L1/L2
weight penalties, Adam/Adagrad/RMSprop optimizers, inverted dropout, and a
JSON serialization that keeps the input/label scaling statistics next to
the weights so downstream MIP embedding can fold them in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

RELU = "relu"
IDENTITY = "id"


class ShapeError(ValueError):
    """Input/weight dimension mismatch."""


class NumericError(ArithmeticError):
    """Non-finite value encountered; carries the offending batch index."""

    def __init__(self, message: str, batch_index: int | None = None):
        super().__init__(message)
        self.batch_index = batch_index


class TrainingDiverged(RuntimeError):
    """Validation MAE became non-finite (or tripped the early guard)."""

    def __init__(self, message: str, history: list[dict]):
        super().__init__(message)
        self.history = history


class ModelFormatError(ValueError):
    """Model file malformed; message names the offending field."""


@dataclass
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = RELU


@dataclass
class DenseLayer:
    w: np.ndarray  # (in_dim, out_dim)
    b: np.ndarray  # (out_dim,)
    act: str = RELU


class Mlp:
    """Stack of dense layers; immutable by convention once trained."""

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise ShapeError("network needs at least one layer")
        for i, layer in enumerate(layers):
            if layer.w.ndim != 2 or layer.b.ndim != 1:
                raise ShapeError(f"layer {i}: expected matrix weight and vector bias")
            if layer.w.shape[1] != layer.b.shape[0]:
                raise ShapeError(f"layer {i}: weight/bias shape mismatch "
                                 f"{layer.w.shape} vs {layer.b.shape}")
            if i and layers[i - 1].w.shape[1] != layer.w.shape[0]:
                raise ShapeError(f"layer {i}: input dim {layer.w.shape[0]} does not "
                                 f"match previous output {layers[i - 1].w.shape[1]}")
            if not (np.isfinite(layer.w).all() and np.isfinite(layer.b).all()):
                raise NumericError(f"layer {i}: non-finite parameters")
        self.layers = layers

    @property
    def in_dim(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[1]

    def specs(self) -> list[LayerSpec]:
        return [LayerSpec(l.w.shape[0], l.w.shape[1], l.act) for l in self.layers]

    def copy(self) -> "Mlp":
        return Mlp([DenseLayer(l.w.copy(), l.b.copy(), l.act) for l in self.layers])

    def n_hidden_units(self) -> int:
        return sum(l.w.shape[1] for l in self.layers[:-1])


def init_mlp(dims: list[int], rng: np.random.Generator,
             hidden_act: str = RELU, out_act: str = IDENTITY) -> Mlp:
    """Glorot-uniform initialization: weights in +-sqrt(6/(fan_in+fan_out))."""
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = np.sqrt(6.0 / (d_in + d_out))
        w = rng.uniform(-bound, bound, size=(d_in, d_out))
        act = out_act if i == len(dims) - 2 else hidden_act
        layers.append(DenseLayer(w, np.zeros(d_out), act))
    return Mlp(layers)


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == RELU:
        return np.maximum(z, 0.0)
    if act == IDENTITY:
        return z
    raise ShapeError(f"unknown activation {act!r}")


def forward(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the network; accepts a single vector or a (n, d) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != mlp.in_dim:
        raise ShapeError(f"input dim {h.shape[1]} != network input {mlp.in_dim}")
    for layer in mlp.layers:
        h = _activate(h @ layer.w + layer.b, layer.act)
    return h[0] if single else h


def _forward_cached(mlp: Mlp, x: np.ndarray, dropout_rate: float = 0.0,
                    rng: np.random.Generator | None = None):
    """Forward keeping pre-activations; optional inverted dropout on hidden
    activations (train-time only)."""
    acts = [x]
    pre = []
    masks = []
    h = x
    for i, layer in enumerate(mlp.layers):
        z = h @ layer.w + layer.b
        pre.append(z)
        h = _activate(z, layer.act)
        if dropout_rate > 0.0 and i < len(mlp.layers) - 1:
            mask = (rng.random(h.shape) >= dropout_rate) / (1.0 - dropout_rate)
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)
        acts.append(h)
    return acts, pre, masks


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((pred - target) ** 2))


def penalty_loss(mlp: Mlp, l1: float, l2: float) -> float:
    total = 0.0
    for layer in mlp.layers:
        if l1:
            total += l1 * np.abs(layer.w).sum()
        if l2:
            total += l2 * (layer.w ** 2).sum()
    return float(total)


def _grads_from_cache(mlp: Mlp, acts, pre, masks, d_out: np.ndarray,
                      l1: float, l2: float):
    """Backpropagate d_out (gradient w.r.t. network output) through the cache.

    Returns ([(dW, db) per layer], gradient w.r.t. the input batch).
    """
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(mlp.layers)
    delta = d_out
    for i in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[i]
        if masks[i] is not None:
            delta = delta * masks[i]
        if layer.act == RELU:
            delta = delta * (pre[i] > 0.0)
        dw = acts[i].T @ delta
        if l1:
            dw = dw + l1 * np.sign(layer.w)
        if l2:
            dw = dw + 2.0 * l2 * layer.w
        grads[i] = (dw, delta.sum(axis=0))
        delta = delta @ layer.w.T
    return grads, delta


def backward(mlp: Mlp, x: np.ndarray, y: np.ndarray,
             l1: float = 0.0, l2: float = 0.0):
    """Gradients of mean-squared error plus weight penalties over a batch.

    Returns (loss, [(dW, db) per layer]).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] == 0:
        raise ShapeError("empty batch")
    acts, pre, masks = _forward_cached(mlp, x)
    pred = acts[-1]
    if not np.isfinite(pred).all():
        bad = int(np.argwhere(~np.isfinite(pred).all(axis=1))[0][0])
        raise NumericError("non-finite prediction in batch", batch_index=bad)
    loss = mse_loss(pred, y) + penalty_loss(mlp, l1, l2)
    if not np.isfinite(loss):
        bad_rows = ~np.isfinite(((pred - y) ** 2).sum(axis=1))
        bad = int(np.argmax(bad_rows)) if bad_rows.any() else 0
        raise NumericError("non-finite loss", batch_index=bad)
    d_out = 2.0 * (pred - y) / pred.size
    grads, _ = _grads_from_cache(mlp, acts, pre, masks, d_out, l1, l2)
    return loss, grads


# -- scaling ------------------------------------------------------------------


@dataclass
class Scaler:
    """Feature standardization statistics (std entries below 1e-8 become 1)."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray) -> "Scaler":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float)
        x_std = x.std(axis=0)
        x_std[x_std < 1e-8] = 1.0
        y_std = float(y.std())
        if y_std < 1e-8:
            y_std = 1.0
        return cls(x.mean(axis=0), x_std, float(y.mean()), y_std)

    @classmethod
    def identity(cls, dim: int) -> "Scaler":
        return cls(np.zeros(dim), np.ones(dim), 0.0, 1.0)

    def scale_x(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.x_mean) / self.x_std

    def unscale_x(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.x_std + self.x_mean

    def scale_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def unscale_y(self, y):
        return np.asarray(y, dtype=float) * self.y_std + self.y_mean


def fold_scaler(mlp: Mlp, scaler: Scaler) -> Mlp:
    """Return an equivalent network over raw inputs/labels.

    The input standardization is absorbed into the first affine layer and
    the label de-standardization into the last, so that
    ``forward(folded, x) == unscale_y(forward(mlp, scale_x(x)))``.
    """
    if scaler.x_mean.shape[0] != mlp.in_dim:
        raise ShapeError("scaler dimension does not match network input")
    folded = mlp.copy()
    first = folded.layers[0]
    inv = 1.0 / scaler.x_std
    first.b = first.b - (scaler.x_mean * inv) @ first.w
    first.w = first.w * inv[:, None]
    last = folded.layers[-1]
    if last.act != IDENTITY:
        raise ShapeError("label scaling can only fold into an identity output layer")
    last.w = last.w * scaler.y_std
    last.b = last.b * scaler.y_std + scaler.y_mean
    return folded


# -- optimizers ---------------------------------------------------------------


class _Optimizer:
    def __init__(self, shapes, lr: float):
        self.lr = lr
        self.state = [tuple(np.zeros(s) for s in pair) for pair in shapes]

    def step(self, params: list[tuple[np.ndarray, np.ndarray]], grads):
        raise NotImplementedError


class Adam(_Optimizer):
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    def __init__(self, shapes, lr):
        super().__init__(shapes, lr)
        self.v = [tuple(np.zeros(s) for s in pair) for pair in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for (m_pair, v_pair, p_pair, g_pair) in zip(self.state, self.v, params, grads):
            for m, v, p, g in zip(m_pair, v_pair, p_pair, g_pair):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class Adagrad(_Optimizer):
    eps = 1e-10

    def step(self, params, grads):
        for (s_pair, p_pair, g_pair) in zip(self.state, params, grads):
            for s, p, g in zip(s_pair, p_pair, g_pair):
                s += g * g
                p -= self.lr * g / (np.sqrt(s) + self.eps)


class RMSprop(_Optimizer):
    rho, eps = 0.99, 1e-8

    def step(self, params, grads):
        for (s_pair, p_pair, g_pair) in zip(self.state, params, grads):
            for s, p, g in zip(s_pair, p_pair, g_pair):
                s *= self.rho
                s += (1.0 - self.rho) * g * g
                p -= self.lr * g / (np.sqrt(s) + self.eps)


OPTIMIZERS = {"adam": Adam, "adagrad": Adagrad, "rmsprop": RMSprop}


def make_optimizer(name: str, mlps: list[Mlp], lr: float) -> _Optimizer:
    shapes = [(l.w.shape, l.b.shape) for mlp in mlps for l in mlp.layers]
    try:
        return OPTIMIZERS[name.lower()](shapes, lr)
    except KeyError:
        raise ValueError(f"unknown optimizer {name!r}")


def flat_params(mlps: list[Mlp]) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(l.w, l.b) for mlp in mlps for l in mlp.layers]


# -- training -----------------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    l1_penalty: float = 0.0
    l2_penalty: float = 0.0
    optimizer: str = "adam"
    dropout_rate: float = 0.0
    epochs: int = 200
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.dropout_rate <= 0.5:
            raise ValueError("dropout_rate must lie in [0, 0.5]")
        if self.l1_penalty < 0 or self.l2_penalty < 0:
            raise ValueError("penalties must be non-negative")
        if self.optimizer.lower() not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainedNetwork:
    """Trained MLP plus the scaling statistics baked into its model file."""

    mlp: Mlp
    scaler: Scaler
    kind: str = "mc"
    meta: dict = field(default_factory=dict)

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = forward(self.mlp, self.scaler.scale_x(x))
        return self.scaler.unscale_y(out[..., 0] if out.ndim > 1 else out[0])

    def folded(self) -> Mlp:
        return fold_scaler(self.mlp, self.scaler)

    def to_json(self) -> str:
        return json.dumps(_net_to_dict(self))

    @classmethod
    def from_json(cls, text: str) -> "TrainedNetwork":
        return _net_from_dict(_load_model_dict(text), cls)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "TrainedNetwork":
        with open(path) as fh:
            return cls.from_json(fh.read())


def raw_mae(mlp: Mlp, scaler: Scaler, x_scaled: np.ndarray, y_raw: np.ndarray) -> float:
    pred = scaler.unscale_y(forward(mlp, x_scaled)[:, 0])
    return float(np.mean(np.abs(pred - y_raw)))


def train(dims: list[int], x: np.ndarray, y: np.ndarray, config: TrainConfig,
          x_val: np.ndarray | None = None, y_val: np.ndarray | None = None,
          abort_threshold: float | None = None, abort_epoch: int = 5):
    """Train a value network; returns (TrainedNetwork, history).

    ``dims`` lists layer widths including input; the scalar output layer is
    appended automatically.  If no validation split is passed, the last 20%
    of a seeded shuffle is held out.  The returned weights are the ones with
    the lowest validation MAE seen over the epochs (raw label units).
    Deterministic for a fixed config.seed.
    """
    config.validate()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != y.shape[0]:
        raise ShapeError("inputs and labels disagree on sample count")
    if x.shape[0] < 10:
        raise ValueError("need at least 10 samples to train")
    rng = np.random.default_rng(config.seed)

    if x_val is None:
        order = rng.permutation(x.shape[0])
        n_tr = max(1, int(round(0.8 * x.shape[0])))
        tr, va = order[:n_tr], order[n_tr:]
        x, x_val, y, y_val = x[tr], x[va], y[tr], y[va]
    else:
        x_val = np.atleast_2d(np.asarray(x_val, dtype=float))
        y_val = np.asarray(y_val, dtype=float).ravel()

    scaler = Scaler.fit(x, y)
    xs = scaler.scale_x(x)
    ys = scaler.scale_y(y)[:, None]
    xs_val = scaler.scale_x(x_val)

    mlp = init_mlp(list(dims) + [1], rng)
    opt = make_optimizer(config.optimizer, [mlp], config.learning_rate)
    params = flat_params([mlp])

    best = mlp.copy()
    best_val = np.inf
    history: list[dict] = []
    n = xs.shape[0]

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            acts, pre, masks = _forward_cached(mlp, xs[idx], config.dropout_rate, rng)
            pred = acts[-1]
            d_out = 2.0 * (pred - ys[idx]) / pred.size
            grads, _ = _grads_from_cache(mlp, acts, pre, masks, d_out,
                                         config.l1_penalty, config.l2_penalty)
            opt.step(params, grads)

        train_mae = raw_mae(mlp, scaler, xs, y)
        val_mae = raw_mae(mlp, scaler, xs_val, y_val)
        history.append({"epoch": epoch, "train_mae": train_mae, "val_mae": val_mae})
        if not np.isfinite(val_mae):
            raise TrainingDiverged(f"validation MAE non-finite at epoch {epoch}", history)
        if abort_threshold is not None and epoch + 1 == abort_epoch \
                and val_mae > abort_threshold:
            raise TrainingDiverged(
                f"early guard: val MAE {val_mae:.3g} above {abort_threshold:.3g}", history)
        if val_mae < best_val:
            best_val = val_mae
            best = mlp.copy()

    net = TrainedNetwork(best, scaler, kind="mc",
                         meta={"val_mae": None if not history else best_val,
                               "dims": list(dims) + [1]})
    return net, history


# -- serialization ------------------------------------------------------------


def layers_to_json(mlp: Mlp) -> list[dict]:
    return [{"w": l.w.tolist(), "b": l.b.tolist(), "act": l.act} for l in mlp.layers]


def layers_from_json(items, where: str) -> Mlp:
    layers = []
    for i, entry in enumerate(items):
        for key in ("w", "b", "act"):
            if key not in entry:
                raise ModelFormatError(f"{where}[{i}]: missing field {key!r}")
        if entry["act"] not in (RELU, IDENTITY):
            raise ModelFormatError(f"{where}[{i}].act: unknown activation {entry['act']!r}")
        try:
            w = np.asarray(entry["w"], dtype=float)
            b = np.asarray(entry["b"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ModelFormatError(f"{where}[{i}]: non-numeric weights ({exc})")
        if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
            raise ModelFormatError(f"{where}[{i}]: weight shape {w.shape} does not "
                                   f"match bias shape {b.shape}")
        if layers and layers[-1].w.shape[1] != w.shape[0]:
            raise ModelFormatError(f"{where}[{i}]: input dim {w.shape[0]} does not "
                                   f"match layer {i - 1} output {layers[-1].w.shape[1]}")
        layers.append(DenseLayer(w, b, entry["act"]))
    if not layers:
        raise ModelFormatError(f"{where}: empty layer list")
    return Mlp(layers)


def scaler_to_json(scaler: Scaler) -> dict:
    return {"x_mean": scaler.x_mean.tolist(), "x_std": scaler.x_std.tolist(),
            "y_mean": scaler.y_mean, "y_std": scaler.y_std}


def scaler_from_json(entry: dict) -> Scaler:
    for key in ("x_mean", "x_std", "y_mean", "y_std"):
        if key not in entry:
            raise ModelFormatError(f"scaler: missing field {key!r}")
    return Scaler(np.asarray(entry["x_mean"], dtype=float),
                  np.asarray(entry["x_std"], dtype=float),
                  float(entry["y_mean"]), float(entry["y_std"]))


def _load_model_dict(text: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not valid JSON: {exc}")
    if "version" not in data:
        raise ModelFormatError("missing field 'version'")
    if data["version"] != 1:
        raise ModelFormatError(f"unsupported model version {data['version']!r}")
    return data


def _net_to_dict(net: TrainedNetwork) -> dict:
    return {"version": 1, "kind": net.kind, "layers": layers_to_json(net.mlp),
            "scaler": scaler_to_json(net.scaler), "meta": net.meta}


def _net_from_dict(data: dict, cls) -> TrainedNetwork:
    if data.get("kind") not in ("mc", "sc"):
        raise ModelFormatError(f"kind: expected 'mc' or 'sc', got {data.get('kind')!r}")
    if data["kind"] == "sc":
        raise ModelFormatError("kind 'sc' models are loaded by scenario_embedding")
    if "layers" not in data:
        raise ModelFormatError("missing field 'layers'")
    mlp = layers_from_json(data["layers"], "layers")
    scaler = scaler_from_json(data.get("scaler", {}))
    return cls(mlp, scaler, kind="mc", meta=data.get("meta", {}))
