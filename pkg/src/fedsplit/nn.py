"""Minimal dense-network engine: forward pass, exact backprop, plain SGD.

Models are stacks of fully connected layers, each tagged LOCAL or GLOBAL.
Exactly one layer is GLOBAL; that layer is the only thing agents ever
exchange during cooperative training, as additive weight deltas.  Weights
live in row-major float64 numpy arrays of shape (in_dim, out_dim).

The optimizer is stateless SGD on purpose: an update is a single addition
``w += delta`` with ``delta = -lr * grad``, so broadcasting the delta lets
any replica reproduce the update bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Activation(Enum):
    NONE = "none"
    RELU = "relu"
    SIGMOID = "sigmoid"


class Scope(Enum):
    LOCAL = "local"
    GLOBAL = "global"


@dataclass(frozen=True)
class LayerSpec:
    layer_id: str
    in_dim: int
    out_dim: int
    activation: Activation
    scope: Scope


def split_topology(agent_tag: str) -> list[LayerSpec]:
    """The standard two-local-one-global stack: (4,32) ReLU local,
    (32,16) ReLU global, (16,2) Sigmoid local."""
    return [
        LayerSpec(f"{agent_tag}.1", 4, 32, Activation.RELU, Scope.LOCAL),
        LayerSpec("2", 32, 16, Activation.RELU, Scope.GLOBAL),
        LayerSpec(f"{agent_tag}.3", 16, 2, Activation.SIGMOID, Scope.LOCAL),
    ]


@dataclass
class DenseLayer:
    layer_id: str
    weights: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: Activation
    scope: Scope

    def __post_init__(self) -> None:
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"layer {self.layer_id}: weights must be 2-D")
        if self.bias.shape != (self.weights.shape[1],):
            raise ValueError(f"layer {self.layer_id}: bias shape {self.bias.shape} "
                             f"does not match out_dim {self.weights.shape[1]}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.layer_id, self.weights.copy(), self.bias.copy(),
                          self.activation, self.scope)


@dataclass
class SplitModel:
    owner: str
    layers: list[DenseLayer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(f"layer dims do not chain: {prev.layer_id} out "
                                 f"{prev.out_dim} vs {nxt.layer_id} in {nxt.in_dim}")
        ids = [l.layer_id for l in self.layers]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate layer ids: {ids}")
        n_global = sum(1 for l in self.layers if l.scope is Scope.GLOBAL)
        if n_global != 1:
            raise ValueError(f"model must have exactly one global layer, got {n_global}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def layer(self, layer_id: str) -> DenseLayer:
        for l in self.layers:
            if l.layer_id == layer_id:
                return l
        raise KeyError(layer_id)

    def global_layer(self) -> DenseLayer:
        for l in self.layers:
            if l.scope is Scope.GLOBAL:
                return l
        raise AssertionError("unreachable: validated at construction")

    def copy(self) -> "SplitModel":
        return SplitModel(self.owner, [l.copy() for l in self.layers])


@dataclass
class ForwardTape:
    """Per-layer records from one forward pass, consumed by backward().

    inputs[i] is the batch fed into layer i (so inputs[0] is the model
    input and inputs[i+1] is layer i's post-activation); pre[i] is layer
    i's pre-activation; out is the final post-activation.  All are
    (n, dim) even for a single sample.
    """
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    out: np.ndarray
    layer_ids: tuple[str, ...]


@dataclass
class GradientBundle:
    """Loss gradients keyed by layer_id (weight and bias separately)."""
    epoch: int
    weight_grads: dict[str, np.ndarray]
    bias_grads: dict[str, np.ndarray] = field(default_factory=dict)

    def restricted_to(self, layer_ids: set[str]) -> "GradientBundle":
        return GradientBundle(
            self.epoch,
            {k: v for k, v in self.weight_grads.items() if k in layer_ids},
            {k: v for k, v in self.bias_grads.items() if k in layer_ids},
        )


@dataclass
class LayerDelta:
    """Additive parameter change for one layer: post = pre + delta, exactly."""
    layer_id: str
    weights: np.ndarray
    bias: np.ndarray

    def copy(self) -> "LayerDelta":
        return LayerDelta(self.layer_id, self.weights.copy(), self.bias.copy())


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # branch on sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z: np.ndarray, kind: Activation) -> np.ndarray:
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.SIGMOID:
        return _sigmoid(z)
    return z


def _activation_slope(z: np.ndarray, a: np.ndarray, kind: Activation) -> np.ndarray:
    if kind is Activation.RELU:
        # slope at exactly 0 is defined as 0
        return (z > 0.0).astype(np.float64)
    if kind is Activation.SIGMOID:
        return a * (1.0 - a)
    return np.ones_like(z)


def forward(model: SplitModel, x: np.ndarray) -> tuple[np.ndarray, ForwardTape]:
    """Run the model on one sample (1-D) or a batch (2-D, samples in rows).

    Returns the output plus the tape backward() needs.  Output shape
    mirrors the input: 1-D in, 1-D out.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != model.in_dim:
        raise ValueError(f"input width {arr.shape[-1]} does not match "
                         f"model input dim {model.in_dim}")

    inputs: list[np.ndarray] = []
    pre: list[np.ndarray] = []
    a = arr
    for layer in model.layers:
        inputs.append(a)
        z = a @ layer.weights + layer.bias
        pre.append(z)
        a = _activate(z, layer.activation)
    if not np.isfinite(a).all():
        raise FloatingPointError("non-finite activations in forward pass")
    tape = ForwardTape(inputs, pre, a, tuple(l.layer_id for l in model.layers))
    return (a[0] if single else a), tape


def backward(model: SplitModel, tape: ForwardTape, output_grad: np.ndarray,
             epoch: int = 0) -> GradientBundle:
    """Exact reverse-mode gradients of ``sum(output_grad * output)`` for every
    layer, local and global.  Batched tapes yield gradients summed over the
    batch (put any 1/n into output_grad)."""
    if tape.layer_ids != tuple(l.layer_id for l in model.layers):
        raise ValueError("tape does not belong to this model")
    gy = np.asarray(output_grad, dtype=np.float64)
    if gy.ndim == 1:
        gy = gy[None, :]
    if gy.shape != tape.pre[-1].shape:
        raise ValueError(f"output_grad shape {gy.shape} does not match "
                         f"forward output shape {tape.pre[-1].shape}")

    weight_grads: dict[str, np.ndarray] = {}
    bias_grads: dict[str, np.ndarray] = {}
    g = gy
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        z, a_in = tape.pre[i], tape.inputs[i]
        a_out = tape.inputs[i + 1] if i + 1 < len(model.layers) else tape.out
        g = g * _activation_slope(z, a_out, layer.activation)
        weight_grads[layer.layer_id] = a_in.T @ g
        bias_grads[layer.layer_id] = g.sum(axis=0)
        if i > 0:
            g = g @ layer.weights.T
    return GradientBundle(epoch, weight_grads, bias_grads)


def apply_update(model: SplitModel, bundle: GradientBundle,
                 learning_rate: float) -> dict[str, LayerDelta]:
    """One SGD step: w += -lr*g for every layer in the bundle.

    Returns the exact additive deltas applied, keyed by layer_id; adding a
    returned delta to a copy of the pre-update layer reproduces the
    post-update layer bit-for-bit (the delta IS the applied addend).
    """
    deltas: dict[str, LayerDelta] = {}
    for layer_id, wg in bundle.weight_grads.items():
        layer = model.layer(layer_id)
        bg = bundle.bias_grads[layer_id]
        if wg.shape != layer.weights.shape or bg.shape != layer.bias.shape:
            raise ValueError(f"gradient shape mismatch for layer {layer_id}")
        dw = -learning_rate * wg
        db = -learning_rate * bg
        layer.weights += dw
        layer.bias += db
        if not (np.isfinite(layer.weights).all() and np.isfinite(layer.bias).all()):
            raise FloatingPointError(f"non-finite weights after update of layer {layer_id}")
        deltas[layer_id] = LayerDelta(layer_id, dw, db)
    return deltas


def init_model(seed: int, topology: list[LayerSpec], owner: str = "") -> SplitModel:
    """Deterministic init: weights uniform in [-1/sqrt(in_dim), +1/sqrt(in_dim)],
    biases zero."""
    if not topology:
        raise ValueError("empty topology")
    rng = np.random.default_rng(seed)
    layers = []
    for spec in topology:
        bound = 1.0 / np.sqrt(spec.in_dim)
        w = rng.uniform(-bound, bound, size=(spec.in_dim, spec.out_dim))
        layers.append(DenseLayer(spec.layer_id, w, np.zeros(spec.out_dim),
                                 spec.activation, spec.scope))
    return SplitModel(owner, layers)
