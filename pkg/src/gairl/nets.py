"""Dense feed-forward networks with exact reverse-mode gradients.

Everything runs in float64: the gradient-check tolerances used throughout the
test suite (and the reproducibility contract) matter more than speed at these
network sizes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

HIDDEN_ACTIVATIONS = ("leaky_relu",)
OUTPUT_ACTIVATIONS = ("linear", "tanh", "sigmoid")


class SpecError(ValueError):
    """Raised for an invalid network specification."""


@dataclass(frozen=True)
class NetworkSpec:
    """Shape and activation description of one feed-forward network."""

    layer_sizes: tuple[int, ...]
    hidden_activation: str = "leaky_relu"
    leak: float = 0.2
    output_activation: str = "linear"
    dropout: float = 0.0
    init_stddev: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        self.validate()

    def validate(self):
        if len(self.layer_sizes) < 2:
            raise SpecError(f"need at least input and output sizes, got {self.layer_sizes}")
        if any(s <= 0 for s in self.layer_sizes):
            raise SpecError(f"layer sizes must be positive, got {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise SpecError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise SpecError(f"unknown output activation {self.output_activation!r}")
        if not 0.0 < self.leak < 1.0:
            raise SpecError(f"leak must be in (0, 1), got {self.leak}")
        if not 0.0 <= self.dropout < 1.0:
            raise SpecError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.init_stddev < 0.0:
            raise SpecError(f"init_stddev must be >= 0, got {self.init_stddev}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1


@dataclass
class NetworkParameters:
    """Per-layer weight matrices (out x in) and bias vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "NetworkParameters":
        return NetworkParameters([w.copy() for w in self.weights],
                                 [b.copy() for b in self.biases])


@dataclass
class GradientSet:
    """Gradients mirroring NetworkParameters, plus the input gradient."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_gradient: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


@dataclass
class ForwardCache:
    """Intermediate values from one forward pass, consumed by backward()."""

    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]
    dropout_masks: list[np.ndarray | None]
    mode: str
    single: bool


def _as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def init_network(spec: NetworkSpec, seed) -> NetworkParameters:
    """Draw weights from N(0, init_stddev^2); biases start at zero.

    `seed` may be an int or a numpy Generator; a given seed always yields
    bit-identical parameters.
    """
    spec.validate()
    rng = _as_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        weights.append(rng.normal(0.0, spec.init_stddev, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParameters(weights, biases)


def leaky_relu(z: np.ndarray, leak: float) -> np.ndarray:
    return np.where(z > 0, z, leak * z)


def leaky_relu_grad(z: np.ndarray, leak: float) -> np.ndarray:
    # Subgradient at the kink is fixed to 1 (the max branch).
    return np.where(z >= 0, 1.0, leak)


def _output_act(z, kind):
    if kind == "linear":
        return z
    if kind == "tanh":
        return np.tanh(z)
    return 1.0 / (1.0 + np.exp(-z))  # sigmoid


def _output_act_grad(z, y, kind):
    if kind == "linear":
        return np.ones_like(z)
    if kind == "tanh":
        return 1.0 - y * y
    return y * (1.0 - y)


def forward(params: NetworkParameters, spec: NetworkSpec, inputs,
            mode: str = "eval", rng: np.random.Generator | None = None):
    """Run the network; returns (outputs, cache).

    Accepts a single vector or a (batch, dim) matrix. Dropout applies to
    hidden activations only, in train mode, with inverted scaling so the
    eval-mode expectation is unchanged.
    """
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != spec.input_dim:
        raise ValueError(f"input dim {x.shape[1]} != expected {spec.input_dim}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    pre, act, masks = [], [], []
    h = x
    n = spec.num_layers
    for layer in range(n):
        z = h @ params.weights[layer].T + params.biases[layer]
        pre.append(z)
        if layer == n - 1:
            a = _output_act(z, spec.output_activation)
            mask = None
        else:
            a = leaky_relu(z, spec.leak)
            if mode == "train" and spec.dropout > 0.0:
                if rng is None:
                    raise ValueError("train-mode dropout requires an rng")
                keep = 1.0 - spec.dropout
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
            else:
                mask = None
        act.append(a)
        masks.append(mask)
        h = a
    cache = ForwardCache(x, pre, act, masks, mode, single)
    out = act[-1][0] if single else act[-1]
    return out, cache


def backward(params: NetworkParameters, spec: NetworkSpec, cache: ForwardCache,
             output_gradient, *, wrt_preactivation: bool = False) -> GradientSet:
    """Exact gradients of sum(output_gradient * output) w.r.t. all parameters.

    `output_gradient` must match the forward output's shape. Pass
    `wrt_preactivation=True` when the gradient is already taken w.r.t. the
    final pre-activation (used for numerically stable sigmoid losses).
    """
    g = np.asarray(output_gradient, dtype=np.float64)
    if cache.single:
        g = g[None, :]
    if g.shape != cache.activations[-1].shape:
        raise ValueError(f"output gradient shape {g.shape} != {cache.activations[-1].shape}")

    n = spec.num_layers
    if wrt_preactivation:
        delta = g
    else:
        delta = g * _output_act_grad(cache.pre_activations[-1], cache.activations[-1],
                                     spec.output_activation)

    d_weights = [None] * n
    d_biases = [None] * n
    for layer in range(n - 1, -1, -1):
        h_prev = cache.inputs if layer == 0 else cache.activations[layer - 1]
        d_weights[layer] = delta.T @ h_prev
        d_biases[layer] = delta.sum(axis=0)
        if layer > 0:
            back = delta @ params.weights[layer]
            mask = cache.dropout_masks[layer - 1]
            if mask is not None:
                back = back * mask
            delta = back * leaky_relu_grad(cache.pre_activations[layer - 1], spec.leak)
        else:
            input_grad = delta @ params.weights[0]
    if cache.single:
        input_grad = input_grad[0]
    return GradientSet(d_weights, d_biases, input_gradient=input_grad)


def global_norm(arrays) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in arrays)))


def clip_arrays(arrays, max_norm: float) -> float:
    """Rescale arrays in place so their global L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    norm = global_norm(arrays)
    if not np.isfinite(norm):
        raise FloatingPointError("non-finite gradient norm")
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for a in arrays:
            a *= scale
    return norm


def clip_gradients(grads: GradientSet, max_norm: float) -> GradientSet:
    """Global-norm gradient clipping over all layers jointly."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    for a in grads.arrays():
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite gradient entries")
    clip_arrays(grads.arrays(), max_norm)
    return grads


@dataclass
class SgdState:
    learning_rate: float
    step: int = 0


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ValueError("adam decay rates must lie in (0, 1)")


OptimizerState = SgdState | AdamState


def update_arrays(arrays: list[np.ndarray], state: OptimizerState,
                  grads: list[np.ndarray]) -> None:
    """Apply one optimizer update in place."""
    if len(arrays) != len(grads):
        raise ValueError("parameter/gradient count mismatch")
    for a, g in zip(arrays, grads):
        if a.shape != g.shape:
            raise ValueError(f"shape mismatch {a.shape} vs {g.shape}")
    state.step += 1
    if isinstance(state, SgdState):
        for a, g in zip(arrays, grads):
            a -= state.learning_rate * g
        return
    if not state.m:
        state.m = [np.zeros_like(a) for a in arrays]
        state.v = [np.zeros_like(a) for a in arrays]
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        a -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


def optimizer_step(params: NetworkParameters, state: OptimizerState,
                   grads: GradientSet):
    """One optimizer update; mutates params/state in place and returns them."""
    update_arrays(params.arrays(), state, grads.arrays())
    return params, state


# --- checkpoint format -------------------------------------------------------
#
# Layout: magic, u32 header length, JSON header (array names/shapes plus
# arbitrary metadata), then row-major float64 little-endian array data.

_MAGIC = b"GRLN1\n"


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    header = {
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
        "meta": meta or {},
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a network checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8", count=count)
            arrays[entry["name"]] = data.reshape(shape).astype(np.float64)
    return arrays, header["meta"]


def save_network(path, spec: NetworkSpec, params: NetworkParameters):
    arrays = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    meta = {
        "layer_sizes": list(spec.layer_sizes),
        "hidden_activation": spec.hidden_activation,
        "leak": spec.leak,
        "output_activation": spec.output_activation,
        "dropout": spec.dropout,
        "init_stddev": spec.init_stddev,
    }
    save_arrays(path, arrays, meta)


def load_network(path) -> tuple[NetworkSpec, NetworkParameters]:
    arrays, meta = load_arrays(path)
    spec = NetworkSpec(
        layer_sizes=tuple(meta["layer_sizes"]),
        hidden_activation=meta["hidden_activation"],
        leak=meta["leak"],
        output_activation=meta["output_activation"],
        dropout=meta["dropout"],
        init_stddev=meta["init_stddev"],
    )
    n = spec.num_layers
    params = NetworkParameters([arrays[f"w{i}"] for i in range(n)],
                               [arrays[f"b{i}"] for i in range(n)])
    return spec, params
