"""Dense feedforward autoencoder with per-layer freeze flags.

Layout: encoder layers (LeakyReLU) -> latent layer (affine + tanh) -> decoder
layers (LeakyReLU, sigmoid output). Everything is float64 numpy and works on
batches of row vectors. Backpropagation and the momentum update are written out
by hand so freezing semantics are explicit.
"""

from __future__ import annotations

import copy
import hashlib
import io
import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lisae.errors import ConsistencyError, ModelFormatError, NumericError, ParameterError

DEEP_MAGIC = b"LISAE-DEEP1"
ACTIVATIONS = ("identity", "leaky_relu", "tanh", "sigmoid")
FREEZE_PLANS = ("none", "all_but_latent")
_TANH_MAX = np.nextafter(1.0, 0.0)

_model_ids = itertools.count()


def activate(kind: str, pre: np.ndarray, slope: float = 0.01) -> np.ndarray:
    if kind == "leaky_relu":
        return np.where(pre > 0, pre, slope * pre)
    if kind == "tanh":
        # keep codes strictly inside (-1, 1); float64 tanh rounds to +-1 past |pre| ~ 19
        return np.clip(np.tanh(pre), -_TANH_MAX, _TANH_MAX)
    if kind == "sigmoid":
        # split by sign so neither branch overflows
        out = np.empty_like(pre)
        pos = pre >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-pre[pos]))
        e = np.exp(pre[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    if kind == "identity":
        return pre.copy()
    raise ParameterError(f"unknown activation {kind!r}")


def activation_grad(kind: str, pre: np.ndarray, act: np.ndarray, slope: float = 0.01) -> np.ndarray:
    """Elementwise derivative of the activation at ``pre``."""
    if kind == "leaky_relu":
        return np.where(pre > 0, 1.0, slope)
    if kind == "tanh":
        return 1.0 - act * act
    if kind == "sigmoid":
        return act * (1.0 - act)
    if kind == "identity":
        return np.ones_like(pre)
    raise ParameterError(f"unknown activation {kind!r}")


@dataclass(eq=False)
class Layer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = "leaky_relu"
    slope: float = 0.01
    frozen: bool = False

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        self.biases = np.array(self.biases, dtype=np.float64, ndmin=1)
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ParameterError(f"bias shape {self.biases.shape} does not match weights {self.weights.shape}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise NumericError("non-finite layer parameters")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def preactivate(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights.T + self.biases

    def activate(self, pre: np.ndarray) -> np.ndarray:
        return activate(self.activation, pre, self.slope)


class DeepModel:
    """Encoder layers, one tanh latent layer, decoder layers.

    ``version`` increments on every parameter update so stale forward traces
    can be detected by :func:`backward`.
    """

    def __init__(self, encoder_layers: list[Layer], latent_layer: Layer, decoder_layers: list[Layer]):
        self.encoder_layers = list(encoder_layers)
        self.latent_layer = latent_layer
        self.decoder_layers = list(decoder_layers)
        self.version = 0
        self.uid = next(_model_ids)
        if latent_layer.activation != "tanh":
            raise ParameterError("latent layer must use tanh")
        layers = self.layers
        if not decoder_layers:
            raise ParameterError("at least one decoder layer is required")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ParameterError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        if layers[-1].out_dim != self.input_dim:
            raise ParameterError("output dim must equal input dim")
        if latent_layer.out_dim >= self.input_dim:
            raise ParameterError("latent dim must be smaller than input dim")

    @property
    def layers(self) -> list[Layer]:
        return [*self.encoder_layers, self.latent_layer, *self.decoder_layers]

    @property
    def latent_index(self) -> int:
        return len(self.encoder_layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def latent_dim(self) -> int:
        return self.latent_layer.out_dim

    def copy(self) -> "DeepModel":
        clone = copy.deepcopy(self)
        clone.uid = next(_model_ids)
        return clone

    def reconstruct(self, X) -> np.ndarray:
        return forward(self, X).output

    def param_blob(self, part: str = "all") -> bytes:
        """Raw parameter bytes of ``encoder``, ``latent``, ``decoder`` or ``all`` layers."""
        groups = {
            "encoder": self.encoder_layers,
            "latent": [self.latent_layer],
            "decoder": self.decoder_layers,
            "all": self.layers,
        }
        buf = io.BytesIO()
        for layer in groups[part]:
            buf.write(np.ascontiguousarray(layer.weights, "<f8").tobytes())
            buf.write(np.ascontiguousarray(layer.biases, "<f8").tobytes())
        return buf.getvalue()

    def checksum(self, part: str = "all") -> str:
        return hashlib.sha256(self.param_blob(part)).hexdigest()


def glorot_layer(rng: np.random.Generator, n_in: int, n_out: int, activation: str, slope: float = 0.01) -> Layer:
    a = np.sqrt(6.0 / (n_in + n_out))
    return Layer(rng.uniform(-a, a, size=(n_out, n_in)), np.zeros(n_out), activation, slope)


def build_model(
    input_dim: int,
    latent_dim: int,
    hidden: tuple[int, ...] = (128, 64),
    seed: int = 0,
    slope: float = 0.01,
    output_activation: str = "sigmoid",
) -> DeepModel:
    """Symmetric dense autoencoder ``input -> hidden... -> latent -> reversed(hidden) -> input``."""
    if latent_dim < 1 or latent_dim >= input_dim:
        raise ParameterError(f"latent_dim must be in [1, {input_dim - 1}], got {latent_dim}")
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden]
    enc = [glorot_layer(rng, a, b, "leaky_relu", slope) for a, b in zip(dims, dims[1:])]
    latent = glorot_layer(rng, dims[-1], latent_dim, "tanh", slope)
    back = [latent_dim, *reversed(hidden), input_dim]
    dec = [
        glorot_layer(rng, a, b, "leaky_relu" if i < len(back) - 2 else output_activation, slope)
        for i, (a, b) in enumerate(zip(back, back[1:]))
    ]
    return DeepModel(enc, latent, dec)


@dataclass
class ForwardTrace:
    """Per-layer inputs, pre-activations and activations of one forward pass (batched)."""

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    acts: list[np.ndarray]
    latent_index: int
    model_uid: int
    model_version: int
    single: bool = False

    @property
    def output(self) -> np.ndarray:
        out = self.acts[-1]
        return out[0] if self.single else out

    @property
    def latent_preactivation(self) -> np.ndarray:
        """``s``: the encoder output fed into the latent layer."""
        s = self.inputs[self.latent_index]
        return s[0] if self.single else s

    @property
    def latent(self) -> np.ndarray:
        z = self.acts[self.latent_index]
        return z[0] if self.single else z


def forward(model: DeepModel, x) -> ForwardTrace:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ParameterError(f"expected input of length {model.input_dim}, got shape {np.shape(x)}")
    inputs, preacts, acts = [], [], []
    h = X
    for layer in model.layers:
        inputs.append(h)
        pre = layer.preactivate(h)
        h = layer.activate(pre)
        preacts.append(pre)
        acts.append(h)
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite activation in forward pass")
    return ForwardTrace(inputs, preacts, acts, model.latent_index, model.uid, model.version, single)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    skip: list[bool]
    input_grad: np.ndarray | None = None


def backward(
    model: DeepModel,
    trace: ForwardTrace,
    output_gradient,
    latent_input_gradient=None,
) -> Gradients:
    """Backpropagate ``d loss / d output`` through the network.

    Args:
        output_gradient: Gradient with respect to the network output, same shape as it.
        latent_input_gradient: Optional extra gradient injected at the latent layer's
            input ``s`` (used by the linear-separability head).

    Returns:
        Parameter gradients for every layer. Frozen layers still get gradients but
        are flagged ``skip`` so :func:`apply_gradients` leaves them alone.
    """
    if trace.model_uid != model.uid or trace.model_version != model.version:
        raise ConsistencyError("trace was not produced by the current model state")
    g = np.atleast_2d(np.asarray(output_gradient, dtype=np.float64))
    if g.shape != trace.acts[-1].shape:
        raise ConsistencyError(f"output gradient shape {g.shape} != output shape {trace.acts[-1].shape}")
    layers = model.layers
    gw: list[np.ndarray] = [None] * len(layers)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(layers)  # type: ignore[list-item]
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        delta = g * activation_grad(layer.activation, trace.preacts[i], trace.acts[i], layer.slope)
        gw[i] = delta.T @ trace.inputs[i]
        gb[i] = delta.sum(axis=0)
        g = delta @ layer.weights
        if i == trace.latent_index and latent_input_gradient is not None:
            g = g + np.atleast_2d(latent_input_gradient)
    return Gradients(gw, gb, [layer.frozen for layer in layers], input_grad=g)


@dataclass
class MomentumState:
    momentum: float = 0.9
    velocity_w: list[np.ndarray] = field(default_factory=list)
    velocity_b: list[np.ndarray] = field(default_factory=list)


def clip_gradients(grads: Gradients, max_norm: float) -> float:
    """Rescale trainable gradients in place to global L2 norm <= ``max_norm``; returns the original norm."""
    norm = float(np.sqrt(sum(
        np.sum(gw * gw) + np.sum(gb * gb)
        for gw, gb, skip in zip(grads.weights, grads.biases, grads.skip) if not skip
    )))
    if norm > max_norm:
        scale = max_norm / norm
        grads.weights = [gw * scale for gw in grads.weights]
        grads.biases = [gb * scale for gb in grads.biases]
    return norm


def apply_gradients(model: DeepModel, grads: Gradients, learning_rate: float, state: MomentumState) -> None:
    """Heavy-ball update ``v <- mu v + g; p <- p - lr v`` on unfrozen layers only."""
    layers = model.layers
    if len(grads.weights) != len(layers):
        raise ConsistencyError("gradient count does not match layer count")
    for layer, gw, gb in zip(layers, grads.weights, grads.biases):
        if gw.shape != layer.weights.shape or gb.shape != layer.biases.shape:
            raise ConsistencyError("gradient shape does not match layer")
    if not state.velocity_w:
        state.velocity_w = [np.zeros_like(l.weights) for l in layers]
        state.velocity_b = [np.zeros_like(l.biases) for l in layers]
    for i, layer in enumerate(layers):
        if layer.frozen or grads.skip[i]:
            continue
        if not (np.all(np.isfinite(grads.weights[i])) and np.all(np.isfinite(grads.biases[i]))):
            raise NumericError(f"non-finite gradient for layer {i}")
        state.velocity_w[i] = state.momentum * state.velocity_w[i] + grads.weights[i]
        state.velocity_b[i] = state.momentum * state.velocity_b[i] + grads.biases[i]
        if learning_rate != 0.0:
            layer.weights = layer.weights - learning_rate * state.velocity_w[i]
            layer.biases = layer.biases - learning_rate * state.velocity_b[i]
    model.version += 1


def set_freeze(model: DeepModel, plan: str) -> None:
    if plan not in FREEZE_PLANS:
        raise ParameterError(f"unknown freeze plan {plan!r}")
    for layer in model.layers:
        layer.frozen = plan == "all_but_latent"
    model.latent_layer.frozen = False


def model_to_bytes(model: DeepModel) -> bytes:
    """``LISAE-DEEP1`` | layer count | latent index | per-layer header | parameters."""
    layers = model.layers
    buf = io.BytesIO()
    buf.write(DEEP_MAGIC)
    buf.write(struct.pack("<II", len(layers), model.latent_index))
    for layer in layers:
        buf.write(struct.pack("<IIBBd", layer.in_dim, layer.out_dim,
                              ACTIVATIONS.index(layer.activation), int(layer.frozen), layer.slope))
    buf.write(model.param_blob("all"))
    return buf.getvalue()


def model_from_bytes(data: bytes) -> DeepModel:
    k = len(DEEP_MAGIC)
    if data[:k] != DEEP_MAGIC:
        raise ModelFormatError("not a deep LIS-AE model file (bad magic)")
    try:
        n_layers, latent_index = struct.unpack_from("<II", data, k)
        off = k + 8
        headers = []
        for _ in range(n_layers):
            headers.append(struct.unpack_from("<IIBBd", data, off))
            off += struct.calcsize("<IIBBd")
        layers = []
        for n_in, n_out, tag, frozen, slope in headers:
            w = np.frombuffer(data, "<f8", n_in * n_out, off).reshape(n_out, n_in).astype(np.float64)
            off += 8 * n_in * n_out
            b = np.frombuffer(data, "<f8", n_out, off).astype(np.float64)
            off += 8 * n_out
            layers.append(Layer(w, b, ACTIVATIONS[tag], slope, bool(frozen)))
    except (struct.error, ValueError, IndexError) as exc:
        raise ModelFormatError(f"malformed deep model file: {exc}") from exc
    if off != len(data):
        raise ModelFormatError("trailing bytes after parameters")
    return DeepModel(layers[:latent_index], layers[latent_index], layers[latent_index + 1 :])


def save_model(model: DeepModel, path: str | Path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path: str | Path) -> DeepModel:
    return model_from_bytes(Path(path).read_bytes())
