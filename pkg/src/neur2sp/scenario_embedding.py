"""Single-cut architecture: per-scenario encoder, mean aggregation, post-
aggregation encoder, and a ReLU prediction head.

Only the head is ever compiled into a MIP, so the two encoder networks are
free to be arbitrarily deep.  The encoder consumes (probability, scenario)
pairs; scenario features are standardized, the probability is left raw.
Training differentiates end-to-end through the mean, so each scenario in a
set receives 1/K of the upstream gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .nn_core import (IDENTITY, RELU, Mlp, ModelFormatError, NumericError,
                      Scaler, ShapeError, TrainConfig, TrainingDiverged,
                      _forward_cached, _grads_from_cache, flat_params,
                      fold_scaler, forward, init_mlp, layers_from_json,
                      layers_to_json, make_optimizer, penalty_loss,
                      scaler_from_json, scaler_to_json)


@dataclass
class ScenarioSet:
    """Scenarios with probabilities; probabilities must sum to one."""

    scenarios: np.ndarray  # (K, d)
    probs: np.ndarray  # (K,)

    def __post_init__(self):
        self.scenarios = np.atleast_2d(np.asarray(self.scenarios, dtype=float))
        self.probs = np.asarray(self.probs, dtype=float).ravel()
        if self.scenarios.shape[0] != self.probs.shape[0]:
            raise ValueError("scenario/probability count mismatch")
        if self.scenarios.shape[0] == 0:
            raise ValueError("scenario set is empty")
        if (self.probs < -1e-12).any():
            raise ValueError("negative scenario probability")
        if abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {self.probs.sum()!r}, not 1")

    def __len__(self) -> int:
        return self.scenarios.shape[0]

    @property
    def dim(self) -> int:
        return self.scenarios.shape[1]

    @classmethod
    def uniform(cls, scenarios: np.ndarray) -> "ScenarioSet":
        scenarios = np.atleast_2d(np.asarray(scenarios, dtype=float))
        k = scenarios.shape[0]
        return cls(scenarios, np.full(k, 1.0 / k))


@dataclass
class SingleCutNet:
    """psi1 -> mean -> psi2 -> phi composite with shared scaling statistics.

    ``scaler.x_mean/x_std`` cover the concatenation [first-stage x, scenario
    features]: the first ``n_x`` entries standardize phi's first-stage input,
    the rest standardize psi1's scenario input.
    """

    psi1: Mlp
    psi2: Mlp
    phi: Mlp
    scaler: Scaler
    n_x: int
    scen_dim: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.psi1.in_dim != 1 + self.scen_dim:
            raise ShapeError("psi1 input must be 1 + scenario dim")
        if self.psi2.in_dim != self.psi1.out_dim:
            raise ShapeError("psi2 input must match psi1 output")
        if self.phi.in_dim != self.n_x + self.psi2.out_dim:
            raise ShapeError("phi input must be first-stage dim + embedding dim")
        if self.phi.out_dim != 1 or self.phi.layers[-1].act != IDENTITY:
            raise ShapeError("phi must end in a scalar identity layer")
        if any(l.act != RELU for l in self.phi.layers[:-1]):
            raise ShapeError("phi hidden layers must be ReLU (it gets MIP-embedded)")
        if self.scaler.x_mean.shape[0] != self.n_x + self.scen_dim:
            raise ShapeError("scaler must cover [x, scenario] concatenation")

    @property
    def embed_dim(self) -> int:
        return self.psi2.out_dim

    def scale_first_stage(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.scaler.x_mean[:self.n_x]) \
            / self.scaler.x_std[:self.n_x]

    def scale_scenarios(self, xi: np.ndarray) -> np.ndarray:
        return (np.asarray(xi, dtype=float) - self.scaler.x_mean[self.n_x:]) \
            / self.scaler.x_std[self.n_x:]

    def phi_folded(self) -> Mlp:
        """phi over raw inputs [x, embedding] and raw labels, for embedding."""
        stats = Scaler(
            np.concatenate([self.scaler.x_mean[:self.n_x], np.zeros(self.embed_dim)]),
            np.concatenate([self.scaler.x_std[:self.n_x], np.ones(self.embed_dim)]),
            self.scaler.y_mean, self.scaler.y_std)
        return fold_scaler(self.phi, stats)

    def to_json(self) -> str:
        data = {"version": 1, "kind": "sc",
                "psi1": layers_to_json(self.psi1),
                "psi2": layers_to_json(self.psi2),
                "phi": layers_to_json(self.phi),
                "scaler": scaler_to_json(self.scaler),
                "meta": {**self.meta, "n_x": self.n_x, "scen_dim": self.scen_dim}}
        return json.dumps(data)

    @classmethod
    def from_json(cls, text: str) -> "SingleCutNet":
        from .nn_core import _load_model_dict
        data = _load_model_dict(text)
        if data.get("kind") != "sc":
            raise ModelFormatError(f"kind: expected 'sc', got {data.get('kind')!r}")
        for stack in ("psi1", "psi2", "phi"):
            if stack not in data:
                raise ModelFormatError(f"missing field {stack!r}")
        meta = data.get("meta", {})
        for key in ("n_x", "scen_dim"):
            if key not in meta:
                raise ModelFormatError(f"meta: missing field {key!r}")
        return cls(layers_from_json(data["psi1"], "psi1"),
                   layers_from_json(data["psi2"], "psi2"),
                   layers_from_json(data["phi"], "phi"),
                   scaler_from_json(data.get("scaler", {})),
                   int(meta["n_x"]), int(meta["scen_dim"]), meta)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "SingleCutNet":
        with open(path) as fh:
            return cls.from_json(fh.read())


def init_single_cut(n_x: int, scen_dim: int, embed_dims: tuple[int, int, int],
                    relu_hidden: int, rng: np.random.Generator,
                    scaler: Scaler | None = None) -> SingleCutNet:
    e1, e2, e3 = embed_dims
    psi1 = init_mlp([1 + scen_dim, e1, e2], rng, out_act=RELU)
    psi2 = init_mlp([e2, e3], rng, out_act=RELU)
    phi = init_mlp([n_x + e3, relu_hidden, 1], rng)
    if scaler is None:
        scaler = Scaler.identity(n_x + scen_dim)
    return SingleCutNet(psi1, psi2, phi, scaler, n_x, scen_dim)


def _psi1_inputs(net: SingleCutNet, scenarios: np.ndarray, probs: np.ndarray) -> np.ndarray:
    return np.concatenate([probs[..., None], net.scale_scenarios(scenarios)], axis=-1)


def embed_scenarios(net: SingleCutNet, scen_set: ScenarioSet) -> np.ndarray:
    """psi2(mean_k psi1(p_k, xi_k)); works for any set size."""
    if scen_set.dim != net.scen_dim:
        raise ShapeError(f"scenario dim {scen_set.dim} != model dim {net.scen_dim}")
    encoded = forward(net.psi1, _psi1_inputs(net, scen_set.scenarios, scen_set.probs))
    return forward(net.psi2, encoded.mean(axis=0))


def sc_forward(net: SingleCutNet, x: np.ndarray, scen_set: ScenarioSet) -> float:
    """Expected-second-stage prediction for (x, scenario set), in label units."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.n_x:
        raise ShapeError(f"first-stage dim {x.shape[-1]} != model dim {net.n_x}")
    phi_in = np.concatenate([net.scale_first_stage(x), embed_scenarios(net, scen_set)])
    return float(net.scaler.unscale_y(forward(net.phi, phi_in)[0]))


def _group_by_cardinality(batch) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, sample in enumerate(batch):
        groups.setdefault(len(sample[1]), []).append(i)
    return groups


def sc_loss_and_grads(net: SingleCutNet, batch, l1: float = 0.0, l2: float = 0.0,
                      dropout_rate: float = 0.0, rng: np.random.Generator | None = None):
    """Loss and gradients over a batch of (x, scenarios, probs, label) samples.

    Loss is MSE on scaled labels plus weight penalties over all three
    sub-networks.  Ragged scenario-set sizes are handled by grouping samples
    of equal cardinality; the mean aggregation hands each scenario 1/K of
    the upstream gradient.  Returns (loss, grads) with grads ordered as
    flat_params([psi1, psi2, phi]).
    """
    if not batch:
        raise ShapeError("empty batch")
    nets = [net.psi1, net.psi2, net.phi]
    grads = [tuple(np.zeros_like(a) for a in pair) for pair in flat_params(nets)]
    n_total = len(batch)
    sq_err = 0.0

    for k, idxs in _group_by_cardinality(batch).items():
        xs = np.stack([np.asarray(batch[i][0], dtype=float) for i in idxs])
        xis = np.stack([np.asarray(batch[i][1], dtype=float) for i in idxs])
        ps = np.stack([np.asarray(batch[i][2], dtype=float) for i in idxs])
        ys = np.array([batch[i][3] for i in idxs], dtype=float)
        b = len(idxs)

        p1_in = _psi1_inputs(net, xis, ps).reshape(b * k, 1 + net.scen_dim)
        a1, z1, m1 = _forward_cached(net.psi1, p1_in, dropout_rate, rng)
        pooled = a1[-1].reshape(b, k, -1).mean(axis=1)
        a2, z2, m2 = _forward_cached(net.psi2, pooled, dropout_rate, rng)
        phi_in = np.concatenate([net.scale_first_stage(xs), a2[-1]], axis=1)
        a3, z3, m3 = _forward_cached(net.phi, phi_in, dropout_rate, rng)

        pred = a3[-1][:, 0]
        ys_scaled = net.scaler.scale_y(ys)
        if not np.isfinite(pred).all():
            raise NumericError("non-finite prediction",
                               batch_index=int(np.argmax(~np.isfinite(pred))))
        err = pred - ys_scaled
        sq_err += float((err ** 2).sum())

        d_out = (2.0 * err / n_total)[:, None]
        g3, d_phi_in = _grads_from_cache(net.phi, a3, z3, m3, d_out, l1, l2)
        d_embed = d_phi_in[:, net.n_x:]
        g2, d_pooled = _grads_from_cache(net.psi2, a2, z2, m2, d_embed, l1, l2)
        d_encoded = np.repeat(d_pooled / k, k, axis=0)
        g1, _ = _grads_from_cache(net.psi1, a1, z1, m1, d_encoded, l1, l2)

        # penalty gradients were added once per group; strip the extras below
        for (gw, gb), (dw, db) in zip(grads, g1 + g2 + g3):
            gw += dw
            gb += db

    n_groups = len(_group_by_cardinality(batch))
    if n_groups > 1 and (l1 or l2):
        for (gw, _), (w, _) in zip(grads, flat_params(nets)):
            if l1:
                gw -= (n_groups - 1) * l1 * np.sign(w)
            if l2:
                gw -= (n_groups - 1) * 2.0 * l2 * w

    loss = sq_err / n_total + sum(penalty_loss(m, l1, l2) for m in nets)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    return loss, grads


def sc_backward(net: SingleCutNet, batch, l1: float = 0.0, l2: float = 0.0):
    """Gradient-only view of :func:`sc_loss_and_grads` (no dropout)."""
    return sc_loss_and_grads(net, batch, l1, l2)


@dataclass
class ScTrainConfig(TrainConfig):
    embed_dim_1: int = 128
    embed_dim_2: int = 64
    embed_dim_3: int = 32
    relu_hidden_dim: int = 128


def sc_validation_mae(net: SingleCutNet, samples) -> float:
    errs = [sc_forward(net, x, ScenarioSet(xis, p)) - y for x, xis, p, y in samples]
    return float(np.mean(np.abs(errs)))


def train_single_cut(samples, config: ScTrainConfig,
                     val_samples=None, abort_threshold: float | None = None,
                     abort_epoch: int = 5):
    """Train the composite on (x, scenarios, probs, label) samples.

    Mini-batches group samples with equal scenario-set cardinality, which
    sidesteps padding.  Checkpoints the parameters with the best validation
    MAE (raw label units).  Returns (SingleCutNet, history).
    """
    config.validate()
    samples = list(samples)
    if len(samples) < 10:
        raise ValueError("need at least 10 samples to train")
    rng = np.random.default_rng(config.seed)

    if val_samples is None:
        order = rng.permutation(len(samples))
        n_tr = max(1, int(round(0.8 * len(samples))))
        val_samples = [samples[i] for i in order[n_tr:]]
        samples = [samples[i] for i in order[:n_tr]]
    else:
        val_samples = list(val_samples)

    n_x = len(samples[0][0])
    scen_dim = np.atleast_2d(samples[0][1]).shape[1]
    xs = np.stack([np.asarray(s[0], dtype=float) for s in samples])
    all_xi = np.concatenate([np.atleast_2d(s[1]) for s in samples])
    ys = np.array([s[3] for s in samples], dtype=float)

    x_stats = Scaler.fit(xs, ys)
    xi_stats = Scaler.fit(all_xi, ys)
    scaler = Scaler(np.concatenate([x_stats.x_mean, xi_stats.x_mean]),
                    np.concatenate([x_stats.x_std, xi_stats.x_std]),
                    x_stats.y_mean, x_stats.y_std)

    net = init_single_cut(n_x, scen_dim,
                          (config.embed_dim_1, config.embed_dim_2, config.embed_dim_3),
                          config.relu_hidden_dim, rng, scaler)
    nets = [net.psi1, net.psi2, net.phi]
    opt = make_optimizer(config.optimizer, nets, config.learning_rate)
    params = flat_params(nets)

    def snapshot():
        return (net.psi1.copy(), net.psi2.copy(), net.phi.copy())

    best = snapshot()
    best_val = np.inf
    history: list[dict] = []

    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        by_k: dict[int, list[int]] = {}
        for i in order:
            by_k.setdefault(len(samples[i][1]), []).append(i)
        for idxs in by_k.values():
            for start in range(0, len(idxs), config.batch_size):
                chunk = [samples[i] for i in idxs[start:start + config.batch_size]]
                _, grads = sc_loss_and_grads(net, chunk, config.l1_penalty,
                                             config.l2_penalty,
                                             config.dropout_rate, rng)
                opt.step(params, grads)

        train_mae = sc_validation_mae(net, samples)
        val_mae = sc_validation_mae(net, val_samples)
        history.append({"epoch": epoch, "train_mae": train_mae, "val_mae": val_mae})
        if not np.isfinite(val_mae):
            raise TrainingDiverged(f"validation MAE non-finite at epoch {epoch}", history)
        if abort_threshold is not None and epoch + 1 == abort_epoch \
                and val_mae > abort_threshold:
            raise TrainingDiverged(
                f"early guard: val MAE {val_mae:.3g} above {abort_threshold:.3g}", history)
        if val_mae < best_val:
            best_val = val_mae
            best = snapshot()

    trained = SingleCutNet(best[0], best[1], best[2], scaler, n_x, scen_dim,
                           meta={"val_mae": None if not history else best_val})
    return trained, history
