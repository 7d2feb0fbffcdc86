"""Small dense-network engine: analytic gradients, Adam, and serialization.

Everything is float64 and deterministic for a fixed seed. Networks are plain
data (lists of numpy arrays); no operation shares mutable state between
instances, so independent networks can be used from parallel threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

FINAL_LAYER_BOUND = 3e-3

_FORMAT_VERSION = 1
_MAGIC = b"MLP"


class NumnetError(Exception):
    """Base class for network-engine failures."""


class ConfigurationError(NumnetError):
    """Layer specs do not chain or are otherwise invalid."""


class DimensionError(NumnetError):
    """Input/gradient shape does not match the network."""


class DomainError(NumnetError):
    """Non-finite values where finite ones are required."""


class SerializationError(NumnetError):
    """Corrupt, truncated, or version-mismatched parameter bytes."""


@dataclass(frozen=True)
class LayerSpec:
    input_width: int
    output_width: int
    activation: str

    def __post_init__(self):
        if self.input_width < 1 or self.output_width < 1:
            raise ConfigurationError(
                f"layer widths must be >= 1, got {self.input_width}x{self.output_width}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")


class MlpParameters:
    """Weights, biases, and Adam moment accumulators for one network."""

    def __init__(self, specs, weights, biases):
        self.specs = tuple(specs)
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.m_weights = [np.zeros_like(w) for w in self.weights]
        self.v_weights = [np.zeros_like(w) for w in self.weights]
        self.m_biases = [np.zeros_like(b) for b in self.biases]
        self.v_biases = [np.zeros_like(b) for b in self.biases]
        self.step_count = 0

    @property
    def input_width(self):
        return self.specs[0].input_width

    @property
    def output_width(self):
        return self.specs[-1].output_width

    def copy(self) -> "MlpParameters":
        dup = MlpParameters(self.specs, [w.copy() for w in self.weights],
                            [b.copy() for b in self.biases])
        dup.m_weights = [m.copy() for m in self.m_weights]
        dup.v_weights = [v.copy() for v in self.v_weights]
        dup.m_biases = [m.copy() for m in self.m_biases]
        dup.v_biases = [v.copy() for v in self.v_biases]
        dup.step_count = self.step_count
        return dup


@dataclass
class GradientBundle:
    """Gradients of a scalar objective w.r.t. every parameter and the input."""

    d_weights: list
    d_biases: list
    d_input: np.ndarray


@dataclass
class Tape:
    """Per-layer records from one forward pass, consumed by backward."""

    inputs: list          # input to each layer, shape (n, in_width)
    pre_activations: list  # z = x W^T + b before the nonlinearity
    batched: bool


def _validate_chain(specs):
    specs = tuple(specs)
    if not specs:
        raise ConfigurationError("network needs at least one layer")
    for a, b in zip(specs, specs[1:]):
        if a.output_width != b.input_width:
            raise ConfigurationError(
                f"layer widths do not chain: {a.output_width} -> {b.input_width}"
            )
    return specs


def init_network(specs, seed: int) -> MlpParameters:
    """Fan-in scaled uniform init; final layer uniform(+-3e-3); zero biases."""
    specs = _validate_chain(specs)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i, spec in enumerate(specs):
        if i == len(specs) - 1:
            bound = FINAL_LAYER_BOUND
        else:
            bound = 1.0 / np.sqrt(spec.input_width)
        weights.append(rng.uniform(-bound, bound,
                                   size=(spec.output_width, spec.input_width)))
        biases.append(np.zeros(spec.output_width))
    return MlpParameters(specs, weights, biases)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_derivative(z, kind):
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def forward(params: MlpParameters, x) -> tuple:
    """Run the network; returns (output, tape). Accepts a vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if not batched:
        if x.ndim != 1:
            raise DimensionError(f"input must be 1-D or 2-D, got ndim={x.ndim}")
        x = x[None, :]
    if x.shape[1] != params.input_width:
        raise DimensionError(
            f"input width {x.shape[1]} != network input width {params.input_width}"
        )
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite network input")
    inputs, pre_acts = [], []
    a = x
    for spec, w, b in zip(params.specs, params.weights, params.biases):
        inputs.append(a)
        z = a @ w.T + b
        pre_acts.append(z)
        a = _activate(z, spec.activation)
    out = a if batched else a[0]
    return out, Tape(inputs=inputs, pre_activations=pre_acts, batched=batched)


def backward(params: MlpParameters, tape: Tape, output_gradient,
             need_param_grads: bool = True) -> GradientBundle:
    """Reverse-mode gradients for the forward pass recorded in ``tape``.

    ``output_gradient`` has one row per batch sample; parameter gradients are
    summed over the batch (callers divide by N for means). The input gradient
    is returned per sample so an input slice (e.g. the critic's action
    column) can be extracted.
    """
    g = np.asarray(output_gradient, dtype=np.float64)
    if not tape.batched:
        g = g[None, :]
    if len(tape.inputs) != len(params.weights):
        raise NumnetError("tape does not match network depth")
    if g.shape != tape.pre_activations[-1].shape:
        raise DimensionError(
            f"output gradient shape {g.shape} != {tape.pre_activations[-1].shape}"
        )
    d_weights = [None] * len(params.weights)
    d_biases = [None] * len(params.biases)
    delta = g
    for i in range(len(params.weights) - 1, -1, -1):
        spec = params.specs[i]
        if tape.inputs[i].shape[1] != spec.input_width:
            raise NumnetError("tape does not match network widths")
        delta = delta * _activation_derivative(tape.pre_activations[i],
                                               spec.activation)
        if need_param_grads:
            d_weights[i] = delta.T @ tape.inputs[i]
            d_biases[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i]
    d_input = delta if tape.batched else delta[0]
    return GradientBundle(d_weights=d_weights, d_biases=d_biases, d_input=d_input)


def adam_step(params: MlpParameters, grads: GradientBundle,
              learning_rate: float) -> MlpParameters:
    """One Adam update in place; returns ``params`` for convenience."""
    if learning_rate <= 0.0:
        raise ConfigurationError("learning rate must be positive")
    for g in grads.d_weights + grads.d_biases:
        if g is None or not np.all(np.isfinite(g)):
            raise DomainError("non-finite or missing gradient; update rejected")
    params.step_count += 1
    t = params.step_count
    correction = np.sqrt(1.0 - ADAM_BETA2 ** t) / (1.0 - ADAM_BETA1 ** t)
    step = learning_rate * correction
    for p, g, m, v in zip(params.weights + params.biases,
                          grads.d_weights + grads.d_biases,
                          params.m_weights + params.m_biases,
                          params.v_weights + params.v_biases):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= step * m / (np.sqrt(v) + ADAM_EPS)
    return params


@dataclass
class GradientReport:
    max_relative_error: float
    tolerance: float
    passed: bool


def _fd_scalar(params, x, objective):
    """Central finite differences of ``objective`` w.r.t. every parameter."""
    h = 1e-5
    grads = []
    for arr in params.weights + params.biases:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            hi = objective(params, x)
            flat[j] = orig - h
            lo = objective(params, x)
            flat[j] = orig
            gflat[j] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor: float = 1e-2) -> float:
    """Elementwise |a-n| / max(|a|, |n|, floor), reduced to the maximum.

    The floor keeps finite-difference noise on near-zero gradients from
    registering as spurious relative error.
    """
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_gradients(specs, seed: int, tolerance: float) -> GradientReport:
    """Compare backward() to central finite differences on a random net."""
    if tolerance < 0.0:
        raise ConfigurationError("tolerance must be >= 0")
    params = init_network(specs, seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal(params.input_width)

    def objective(p, xin):
        y, _ = forward(p, xin)
        return float(np.sum(y))

    y, tape = forward(params, x)
    analytic = backward(params, tape, np.ones_like(y))
    numeric = _fd_scalar(params, x, objective)
    worst = 0.0
    for a, n in zip(analytic.d_weights + analytic.d_biases, numeric):
        worst = max(worst, relative_error(a, n))
    return GradientReport(max_relative_error=worst, tolerance=tolerance,
                          passed=worst < tolerance)


_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}


def serialize_params(params: MlpParameters) -> bytes:
    """Lossless little-endian byte form; see deserialize_params."""
    parts = [_MAGIC, struct.pack("<B", _FORMAT_VERSION),
             struct.pack("<I", len(params.specs))]
    for spec in params.specs:
        parts.append(struct.pack("<IIB", spec.input_width, spec.output_width,
                                 _ACT_CODES[spec.activation]))
    for group in (params.weights, params.biases, params.m_weights,
                  params.v_weights, params.m_biases, params.v_biases):
        for arr in group:
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    parts.append(struct.pack("<Q", params.step_count))
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise SerializationError("truncated parameter bytes")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def deserialize_params(data: bytes) -> MlpParameters:
    r = _Reader(bytes(data))
    if r.take(len(_MAGIC)) != _MAGIC:
        raise SerializationError("not a serialized network")
    (version,) = struct.unpack("<B", r.take(1))
    if version != _FORMAT_VERSION:
        raise SerializationError(
            f"version mismatch: got {version}, expected {_FORMAT_VERSION}"
        )
    (n_layers,) = struct.unpack("<I", r.take(4))
    if n_layers == 0 or n_layers > 1024:
        raise SerializationError(f"implausible layer count {n_layers}")
    specs = []
    for _ in range(n_layers):
        win, wout, act = struct.unpack("<IIB", r.take(9))
        if act >= len(ACTIVATIONS):
            raise SerializationError(f"unknown activation code {act}")
        specs.append(LayerSpec(win, wout, ACTIVATIONS[act]))
    specs = _validate_chain(specs)

    def read_group(shapes):
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            raw = r.take(count * 8)
            arrays.append(np.frombuffer(raw, dtype="<f8").astype(np.float64)
                          .reshape(shape))
        return arrays

    w_shapes = [(s.output_width, s.input_width) for s in specs]
    b_shapes = [(s.output_width,) for s in specs]
    weights = read_group(w_shapes)
    biases = read_group(b_shapes)
    params = MlpParameters(specs, weights, biases)
    params.m_weights = read_group(w_shapes)
    params.v_weights = read_group(w_shapes)
    params.m_biases = read_group(b_shapes)
    params.v_biases = read_group(b_shapes)
    (params.step_count,) = struct.unpack("<Q", r.take(8))
    if r.pos != len(r.data):
        raise SerializationError("trailing bytes after parameter payload")
    return params


def params_equal(a: MlpParameters, b: MlpParameters) -> bool:
    if a.specs != b.specs or a.step_count != b.step_count:
        return False
    for ga, gb in zip(
        (a.weights, a.biases, a.m_weights, a.v_weights, a.m_biases, a.v_biases),
        (b.weights, b.biases, b.m_weights, b.v_weights, b.m_biases, b.v_biases),
    ):
        for xa, xb in zip(ga, gb):
            if not np.array_equal(xa, xb):
                return False
    return True


def params_distance(a: MlpParameters, b: MlpParameters) -> float:
    """Max absolute elementwise difference over weights and biases."""
    worst = 0.0
    for xa, xb in zip(a.weights + a.biases, b.weights + b.biases):
        worst = max(worst, float(np.max(np.abs(xa - xb))))
    return worst
