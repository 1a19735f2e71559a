"""Small dense-network engine with exact backpropagation.

Every trainable model in the simulator (the vehicles' classifier, the actor,
the critic and their targets) is a :class:`NetSpec` plus a flat
:class:`ParamVector`.  Parameters are stored layer by layer as a
``(fan_in, fan_out)`` weight block followed by a ``fan_out`` bias block, all
in float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")

Layout = tuple[tuple[str, tuple[int, int]], ...]


class LayoutMismatch(ValueError):
    """Two parameter vectors (or a vector and a spec) do not share a layout."""


class TraceError(RuntimeError):
    """A forward trace was reused or does not belong to the given network."""


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    hidden: tuple[tuple[int, str], ...]
    output: tuple[int, str]

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple((int(w), str(a)) for w, a in self.hidden))
        object.__setattr__(self, "output", (int(self.output[0]), str(self.output[1])))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        for width, act in (*self.hidden, self.output):
            if width < 1:
                raise ValueError(f"layer width must be >= 1, got {width}")
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}; expected one of {ACTIVATIONS}")

    @property
    def output_dim(self) -> int:
        return self.output[0]

    @property
    def layers(self) -> list[tuple[int, int, str]]:
        """(fan_in, fan_out, activation) for every affine layer."""
        out = []
        fan_in = self.input_dim
        for width, act in (*self.hidden, self.output):
            out.append((fan_in, width, act))
            fan_in = width
        return out

    @property
    def layout(self) -> Layout:
        return tuple((f"layer{i}", (fi, fo)) for i, (fi, fo, _) in enumerate(self.layers))

    @property
    def n_params(self) -> int:
        return sum((fi + 1) * fo for fi, fo, _ in self.layers)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": [list(h) for h in self.hidden],
            "output": list(self.output),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(int(d["input_dim"]), tuple(tuple(h) for h in d.get("hidden", ())), tuple(d["output"]))


def mlp(input_dim: int, hidden: Sequence[int], output_dim: int,
        hidden_act: str = "relu", output_act: str = "identity") -> NetSpec:
    return NetSpec(input_dim, tuple((w, hidden_act) for w in hidden), (output_dim, output_act))


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat float64 parameters plus the per-layer shape records that index them."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        layout = tuple((str(name), (int(s[0]), int(s[1]))) for name, s in self.layout)
        expected = sum((fi + 1) * fo for _, (fi, fo) in layout)
        if values.size != expected:
            raise LayoutMismatch(f"{values.size} values do not fit layout needing {expected}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", layout)

    def __len__(self) -> int:
        return self.values.size

    def layers(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield read-only ``(W, b)`` views, ``W`` shaped ``(fan_in, fan_out)``."""
        offset = 0
        for _, (fi, fo) in self.layout:
            w = self.values[offset:offset + fi * fo].reshape(fi, fo)
            offset += fi * fo
            b = self.values[offset:offset + fo]
            offset += fo
            yield w, b

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def max_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def zeros_like(params: ParamVector) -> ParamVector:
    return ParamVector(np.zeros_like(params.values), params.layout)


def _check_layouts(*vectors: ParamVector) -> None:
    first = vectors[0].layout
    for v in vectors[1:]:
        if v.layout != first:
            raise LayoutMismatch("parameter layouts differ")


def _check_spec(params: ParamVector, spec: NetSpec) -> None:
    if params.layout != spec.layout:
        raise LayoutMismatch("parameter layout does not match network spec")


def init_params(spec: NetSpec, seed) -> ParamVector:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fi, fo, _ in spec.layers:
        bound = 1.0 / np.sqrt(fi)
        chunks.append(rng.uniform(-bound, bound, size=fi * fo))
        chunks.append(np.zeros(fo))
    return ParamVector(np.concatenate(chunks), spec.layout)


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    if act == "sigmoid":
        # split by sign to avoid overflow in exp
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return (z > 0).astype(np.float64)
    if act == "tanh":
        return 1.0 - a * a
    if act == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass(eq=False)
class ForwardTrace:
    """Cached layer inputs and pre-activations of one forward pass."""

    spec: NetSpec
    params: ParamVector
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    outputs: list[np.ndarray]
    consumed: bool = field(default=False)


def _as_batch(x, input_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != input_dim:
        raise ValueError(f"expected input of width {input_dim}, got shape {x.shape}")
    return x


def forward(params: ParamVector, spec: NetSpec, x) -> tuple[np.ndarray, ForwardTrace]:
    """Evaluate the network on a batch (one sample per row)."""
    _check_spec(params, spec)
    h = _as_batch(x, spec.input_dim)
    inputs, preacts, outputs = [], [], []
    for (w, b), (_, _, act) in zip(params.layers(), spec.layers):
        inputs.append(h)
        z = h @ w + b
        h = _activate(z, act)
        preacts.append(z)
        outputs.append(h)
    return h, ForwardTrace(spec, params, inputs, preacts, outputs)


def predict(params: ParamVector, spec: NetSpec, x) -> np.ndarray:
    return forward(params, spec, x)[0]


def backward(trace: ForwardTrace, spec: NetSpec, upstream) -> tuple[ParamVector, np.ndarray]:
    """Backpropagate ``upstream`` (dLoss/dOutput, same shape as the output batch).

    Returns the parameter gradient and the gradient with respect to the input batch.
    """
    if trace.consumed:
        raise TraceError("forward trace already consumed by a backward pass")
    if trace.spec != spec:
        raise TraceError("forward trace was produced by a different network spec")
    trace.consumed = True

    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != trace.outputs[-1].shape:
        raise ValueError(f"upstream gradient shape {g.shape} != output shape {trace.outputs[-1].shape}")

    weights = [w for w, _ in trace.params.layers()]
    grads: list[np.ndarray] = []
    for i in reversed(range(len(weights))):
        act = spec.layers[i][2]
        dz = g * _activation_grad(trace.preacts[i], trace.outputs[i], act)
        grads.append(dz.sum(axis=0))
        grads.append((trace.inputs[i].T @ dz).reshape(-1))
        g = dz @ weights[i].T
    grads.reverse()
    return ParamVector(np.concatenate(grads), trace.params.layout), g


def sgd_step(params: ParamVector, grad: ParamVector, eta: float) -> ParamVector:
    _check_layouts(params, grad)
    return params.with_values(params.values - eta * grad.values)


def soft_update_params(target: ParamVector, online: ParamVector, tau: float) -> ParamVector:
    """Polyak averaging: ``tau * online + (1 - tau) * target``."""
    _check_layouts(target, online)
    return target.with_values(tau * online.values + (1.0 - tau) * target.values)


def scale_params(params: ParamVector, factor: float) -> ParamVector:
    return params.with_values(params.values * factor)


def combine_params(a: ParamVector, b: ParamVector, ca: float, cb: float) -> ParamVector:
    _check_layouts(a, b)
    return a.with_values(ca * a.values + cb * b.values)


def softmax_cross_entropy(logits, labels, reduction: str = "sum") -> tuple[float, np.ndarray]:
    """Cross-entropy of softmax(logits) against integer labels.

    ``reduction="sum"`` adds the per-sample losses, ``"mean"`` averages them;
    the returned gradient with respect to the logits matches the reduction.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError("softmax_cross_entropy needs a non-empty 2-D batch of logits")
    n, c = logits.shape
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for {n} samples")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(n)
    loss = -log_probs[rows, labels].sum()
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    if reduction == "mean":
        return float(loss / n), grad / n
    if reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return float(loss), grad


def save_params(params: ParamVector, path) -> None:
    """Write a JSON header line followed by little-endian float64 values."""
    header = {
        "format": "aflsim-params",
        "dtype": "<f8",
        "count": len(params),
        "layout": [[name, list(shape)] for name, shape in params.layout],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(params.values.astype("<f8").tobytes())


def load_params(path) -> ParamVector:
    raw = Path(path).read_bytes()
    split = raw.index(b"\n")
    header = json.loads(raw[:split].decode("utf-8"))
    if header.get("format") != "aflsim-params":
        raise ValueError(f"{path}: not an aflsim parameter file")
    values = np.frombuffer(raw[split + 1:], dtype="<f8")
    if values.size != header["count"]:
        raise ValueError(f"{path}: expected {header['count']} values, found {values.size}")
    layout = tuple((name, tuple(shape)) for name, shape in header["layout"])
    return ParamVector(values.astype(np.float64), layout)
