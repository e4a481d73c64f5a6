"""Compile a trained ReLU network into MILP variables and constraints.

Each hidden unit h = max(0, pre) is split into nonnegative parts
``pre = h_pos - h_neg`` with a binary switch forcing at most one part
nonzero.  The switch rows need valid big-M values, which come from interval
bound propagation over the declared input box.  Units whose pre-activation
interval does not cross zero are compiled without a binary: stably-off
units vanish, stably-on units stay affine.

The network output is tied to its variable by an inequality in the
direction the surrogate objective pushes, so at an optimum the output
variable equals the forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .milp import BINARY, CONTINUOUS, MipModel
from .nn_core import IDENTITY, RELU, Mlp


class UnsupportedArchitectureError(ValueError):
    """Network is not pure-ReLU-hidden with a scalar identity output."""


@dataclass
class InputBox:
    """Componentwise input bounds; fixed coordinates have lower == upper."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.asarray(self.upper, dtype=float).ravel()
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower/upper length mismatch")
        if not (np.isfinite(self.lower).all() and np.isfinite(self.upper).all()):
            raise ValueError("input box must be finite")
        if (self.lower > self.upper + 1e-12).any():
            raise ValueError("input box has lower > upper")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


@dataclass
class LayerBounds:
    """Sound pre-/post-activation intervals per layer (output layer last)."""

    pre: list[tuple[np.ndarray, np.ndarray]]
    post: list[tuple[np.ndarray, np.ndarray]]


def propagate_bounds(mlp: Mlp, box: InputBox) -> LayerBounds:
    """Layer-wise interval arithmetic over the box.  Always sound, possibly
    loose; shrinking the box never widens any interval."""
    if box.dim != mlp.in_dim:
        raise ValueError(f"box dim {box.dim} != network input {mlp.in_dim}")
    lo, hi = box.lower, box.upper
    pre, post = [], []
    for layer in mlp.layers:
        w_pos = np.maximum(layer.w, 0.0)
        w_neg = np.minimum(layer.w, 0.0)
        low = lo @ w_pos + hi @ w_neg + layer.b
        high = hi @ w_pos + lo @ w_neg + layer.b
        pre.append((low, high))
        if layer.act == RELU:
            lo, hi = np.maximum(low, 0.0), np.maximum(high, 0.0)
        else:
            lo, hi = low, high
        post.append((lo, hi))
    return LayerBounds(pre, post)


@dataclass
class UnitEncoding:
    state: str  # "unstable" | "on" | "off"
    h_pos: int | None = None
    h_neg: int | None = None
    switch: int | None = None


@dataclass
class EmbeddedNetwork:
    """Handles created by one embed call."""

    inputs: list[int | None]  # None where the coordinate was fixed
    output: int
    units: list[list[UnitEncoding]]
    bounds: LayerBounds

    @property
    def n_binaries(self) -> int:
        return sum(1 for layer in self.units for u in layer if u.state == "unstable")

    @property
    def n_aux_continuous(self) -> int:
        return 2 * self.n_binaries + 1


def add_input_variables(model: MipModel, box: InputBox,
                        prefix: str = "nn_in") -> list[int]:
    return [model.add_variable(f"{prefix}_{i}", CONTINUOUS, box.lower[i], box.upper[i])
            for i in range(box.dim)]


def _affine_combine(exprs, consts, w: np.ndarray, b: np.ndarray):
    """Push affine unit expressions through a dense layer."""
    out_exprs = []
    out_consts = []
    for j in range(w.shape[1]):
        combined: dict[int, float] = {}
        const = float(b[j])
        for i in range(w.shape[0]):
            coef = w[i, j]
            if coef == 0.0:
                continue
            const += coef * consts[i]
            for handle, c in exprs[i].items():
                combined[handle] = combined.get(handle, 0.0) + coef * c
        out_exprs.append(combined)
        out_consts.append(const)
    return out_exprs, out_consts


def check_embeddable(mlp: Mlp) -> None:
    if mlp.out_dim != 1 or mlp.layers[-1].act != IDENTITY:
        raise UnsupportedArchitectureError(
            "embedding requires a scalar identity output layer")
    for i, layer in enumerate(mlp.layers[:-1]):
        if layer.act != RELU:
            raise UnsupportedArchitectureError(
                f"hidden layer {i} has activation {layer.act!r}; only ReLU embeds")


def embed(model: MipModel, mlp: Mlp, inputs, box: InputBox,
          sense: str = "min", prefix: str = "nn",
          stable_elimination: bool = True) -> EmbeddedNetwork:
    """Emit the MILP encoding of ``mlp`` into ``model``.

    ``inputs[i]`` is an existing variable handle, or None for a coordinate
    fixed at ``box.lower[i]`` (== ``box.upper[i]``).  ``mlp`` must already
    be in raw input/label units (see ``nn_core.fold_scaler``).  ``sense``
    picks the direction of the output inequality: "min" emits
    ``net(x) <= out`` (objective pressure from below), "max" the reverse.

    ``stable_elimination=False`` keeps a binary for every hidden unit even
    when its interval does not cross zero (the zero-width big-M rows then
    pin the unit), making the emitted size a function of the architecture
    alone, independent of the box values.
    """
    check_embeddable(mlp)
    if sense not in ("min", "max"):
        raise ValueError(f"sense must be 'min' or 'max', got {sense!r}")
    inputs = list(inputs)
    if len(inputs) != mlp.in_dim:
        raise ValueError(f"got {len(inputs)} inputs for a {mlp.in_dim}-input network")
    for i, handle in enumerate(inputs):
        if handle is None and abs(box.upper[i] - box.lower[i]) > 1e-12:
            raise ValueError(f"input {i} has no variable but box is not a point")

    bounds = propagate_bounds(mlp, box)
    exprs = [({} if h is None else {h: 1.0}) for h in inputs]
    consts = [box.lower[i] if h is None else 0.0 for i, h in enumerate(inputs)]
    units: list[list[UnitEncoding]] = []

    for m, layer in enumerate(mlp.layers[:-1]):
        pre_exprs, pre_consts = _affine_combine(exprs, consts, layer.w, layer.b)
        low, high = bounds.pre[m]
        layer_units = []
        exprs, consts = [], []
        for j in range(layer.w.shape[1]):
            if stable_elimination and high[j] <= 0.0:  # stably inactive
                layer_units.append(UnitEncoding("off"))
                exprs.append({})
                consts.append(0.0)
            elif stable_elimination and low[j] >= 0.0:  # stably active
                layer_units.append(UnitEncoding("on"))
                exprs.append(pre_exprs[j])
                consts.append(pre_consts[j])
            else:
                u_pos = max(0.0, float(high[j]))
                u_neg = max(0.0, float(-low[j]))
                h_pos = model.add_variable(f"{prefix}_h{m}_{j}", CONTINUOUS, 0.0, u_pos)
                h_neg = model.add_variable(f"{prefix}_s{m}_{j}", CONTINUOUS, 0.0, u_neg)
                z = model.add_variable(f"{prefix}_z{m}_{j}", BINARY)
                row = dict(pre_exprs[j])
                row[h_pos] = row.get(h_pos, 0.0) - 1.0
                row[h_neg] = row.get(h_neg, 0.0) + 1.0
                model.add_constraint(row, "=", -pre_consts[j],
                                     name=f"{prefix}_eq{m}_{j}")
                model.add_constraint({h_pos: 1.0, z: u_pos}, "<=", u_pos,
                                     name=f"{prefix}_on{m}_{j}")
                model.add_constraint({h_neg: 1.0, z: -u_neg}, "<=", 0.0,
                                     name=f"{prefix}_off{m}_{j}")
                layer_units.append(UnitEncoding("unstable", h_pos, h_neg, z))
                exprs.append({h_pos: 1.0})
                consts.append(0.0)
        units.append(layer_units)

    out_layer = mlp.layers[-1]
    out_exprs, out_consts = _affine_combine(exprs, consts, out_layer.w, out_layer.b)
    out_low, out_high = bounds.pre[-1]
    beta = model.add_variable(f"{prefix}_out", CONTINUOUS,
                              float(out_low[0]), float(out_high[0]))
    row = dict(out_exprs[0])
    row[beta] = row.get(beta, 0.0) - 1.0
    model.add_constraint(row, "<=" if sense == "min" else ">=", -out_consts[0],
                         name=f"{prefix}_outrow")
    return EmbeddedNetwork(inputs, beta, units, bounds)
