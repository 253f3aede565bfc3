"""Small fully connected classifier with analytic backpropagation.

Everything is float64 and operates on flat input vectors; ``Image`` carries
the (C, H, W) metadata alongside the flat data.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ModelFormatError, NumericError, ShapeError, TrainingError, UsageError

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class Image:
    data: np.ndarray
    shape: tuple[int, int, int]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 3 or any(s < 1 for s in shape):
            raise ShapeError(f"image shape must be three positive ints, got {shape}")
        if data.size != math.prod(shape):
            raise ShapeError(f"image data has {data.size} values, shape {shape} needs {math.prod(shape)}")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise UsageError("image intensities must be finite and lie in [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "shape", shape)

    @property
    def size(self) -> int:
        return self.data.size


ArrayLike = Union[Image, np.ndarray, Sequence[float]]


def as_vector(x: ArrayLike) -> np.ndarray:
    if isinstance(x, Image):
        return x.data
    return np.asarray(x, dtype=np.float64).reshape(-1)


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2:
            raise ShapeError("layer weight must be a 2-D matrix")
        if b.size != w.shape[0]:
            raise ShapeError(f"bias length {b.size} != weight rows {w.shape[0]}")
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class Classifier:
    """Immutable stack of affine + activation layers; the last layer emits logits."""

    layers: tuple[Layer, ...]
    input_shape: tuple[int, int, int]
    classes: int = field(init=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("classifier needs at least one layer")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        n = math.prod(self.input_shape)
        for i, layer in enumerate(layers):
            rows, cols = layer.weight.shape
            if cols != n:
                raise ShapeError(f"layer {i}: expects {cols} inputs but receives {n}")
            n = rows
        if layers[-1].activation != "identity":
            raise ShapeError("last layer must use the identity activation (logits)")
        object.__setattr__(self, "classes", n)

    @property
    def n_inputs(self) -> int:
        return math.prod(self.input_shape)


def _activate(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _forward(model: Classifier, X: np.ndarray):
    """Batched forward pass; returns the list of layer outputs (inputs first)."""
    if X.shape[-1] != model.n_inputs:
        raise ShapeError(f"input has {X.shape[-1]} components, model expects {model.n_inputs}")
    outs = [X]
    a = X
    for layer in model.layers:
        a = _activate(a @ layer.weight.T + layer.bias, layer.activation)
        outs.append(a)
    return outs


def _backward(model: Classifier, outs, dlogits: np.ndarray, want_params: bool = False):
    delta = dlogits
    grads = []
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        a = outs[i + 1]
        if layer.activation == "tanh":
            delta = delta * (1.0 - a * a)
        elif layer.activation == "relu":
            delta = delta * (a > 0.0)
        if want_params:
            grads.append((delta.T @ outs[i], delta.sum(axis=0)))
        delta = delta @ layer.weight
    if want_params:
        grads.reverse()
        return delta, grads
    return delta


def forward_logits(model: Classifier, x: ArrayLike) -> np.ndarray:
    v = as_vector(x)
    return _forward(model, v[None, :])[-1][0]


def forward_batch(model: Classifier, X: np.ndarray) -> np.ndarray:
    return _forward(model, np.asarray(X, dtype=np.float64))[-1]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_probs(model: Classifier, x: ArrayLike) -> np.ndarray:
    return softmax(forward_logits(model, x))


def predict(model: Classifier, x: ArrayLike) -> int:
    # np.argmax returns the first maximum, which is the lowest-index tie-break
    return int(np.argmax(forward_logits(model, x)))


@dataclass(frozen=True)
class Objective:
    """Scalar function of the logits to differentiate.

    ``kind`` is ``"logit"`` (Z_t), ``"log-prob"`` (log softmax_t) or ``"ce"``
    (cross-entropy, -log softmax_t).
    """

    kind: str
    target: int

    def __call__(self, logits: np.ndarray) -> tuple[float, np.ndarray]:
        t = self.target
        if not 0 <= t < logits.size:
            raise UsageError(f"objective target {t} outside [0, {logits.size})")
        if self.kind == "logit":
            g = np.zeros_like(logits)
            g[t] = 1.0
            return float(logits[t]), g
        if self.kind in ("log-prob", "ce"):
            g = -softmax(logits)
            g[t] += 1.0
            val = float(log_softmax(logits)[t])
            if self.kind == "ce":
                return -val, -g
            return val, g
        raise UsageError(f"unknown objective kind {self.kind!r}; expected logit, log-prob or ce")


LossFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def value_and_input_gradient(model: Classifier, x: ArrayLike, objective: LossFn):
    """Evaluate ``objective(logits(x))`` and its gradient with respect to x.

    ``objective`` maps a logit vector to ``(value, d value / d logits)``.
    Returns ``(value, gradient, logits)``.
    """
    if not callable(objective):
        raise UsageError(f"objective must be an Objective or callable, got {type(objective).__name__}")
    v = as_vector(x)
    outs = _forward(model, v[None, :])
    logits = outs[-1][0]
    value, dlogits = objective(logits)
    grad = _backward(model, outs, np.asarray(dlogits, dtype=np.float64)[None, :])[0]
    return value, grad, logits


def input_gradient(model: Classifier, x: ArrayLike, objective: LossFn) -> np.ndarray:
    return value_and_input_gradient(model, x, objective)[1]


def logit_jacobian(model: Classifier, x: ArrayLike) -> np.ndarray:
    """M x N matrix whose row i is the gradient of logit i."""
    return np.stack([input_gradient(model, x, Objective("logit", i)) for i in range(model.classes)])


def batch_logit_gradient(model: Classifier, X: np.ndarray, target: int) -> np.ndarray:
    """Gradient of logit ``target`` at every row of X."""
    outs = _forward(model, X)
    d = np.zeros((X.shape[0], model.classes))
    d[:, target] = 1.0
    return _backward(model, outs, d)


# -- construction and training ------------------------------------------------


def init_classifier(input_shape, hidden: Sequence[int], classes: int, activation: str = "tanh",
                    rng: np.random.Generator | None = None) -> Classifier:
    rng = np.random.default_rng(0) if rng is None else rng
    sizes = [math.prod(input_shape), *hidden, classes]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        act = "identity" if last else activation
        scale = math.sqrt((2.0 if act == "relu" else 1.0) / fan_in)
        layers.append(Layer(rng.normal(0.0, scale, size=(fan_out, fan_in)), np.zeros(fan_out), act))
    return Classifier(tuple(layers), tuple(input_shape))


@dataclass(frozen=True)
class TrainSpec:
    shape: tuple[int, int, int] = (1, 8, 8)
    classes: int = 2
    samples: int = 2000
    epochs: int = 20
    lr: float = 0.05
    seed: int = 7
    hidden: tuple[int, ...] = (64, 32)
    activation: str = "tanh"
    batch_size: int = 32
    noise: float = 0.1
    test_fraction: float = 0.25

    def __post_init__(self):
        if self.samples < 2 or self.classes < 2 or self.epochs < 0 or self.lr <= 0 or self.batch_size < 1:
            raise UsageError("train spec needs samples >= 2, classes >= 2, epochs >= 0, lr > 0, batch_size >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise UsageError("test_fraction must lie in (0, 1)")


@dataclass
class TrainReport:
    train_accuracy: float
    test_accuracy: float
    final_loss: float
    epochs: int


def accuracy(model: Classifier, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(np.argmax(forward_batch(model, X), axis=1) == y))


def train_toy(spec: TrainSpec):
    """Train a classifier on the synthetic blob task by plain minibatch SGD.

    Returns ``(model, report, (train_set, test_set))``. Deterministic in ``spec.seed``.
    """
    from .data import DatasetSpec, generate_dataset

    data = generate_dataset(DatasetSpec(classes=spec.classes, shape=spec.shape, count=spec.samples,
                                        noise=spec.noise, seed=spec.seed))
    train, test = data.split(spec.test_fraction)
    rng = np.random.default_rng([spec.seed, 1])
    model = init_classifier(spec.shape, spec.hidden, spec.classes, spec.activation, rng)
    weights = [np.array(l.weight) for l in model.layers]
    biases = [np.array(l.bias) for l in model.layers]
    acts = [l.activation for l in model.layers]

    X, y = train.X, train.y
    loss = float("nan")
    # divergence is detected below; silence the overflow warnings on the way there
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(spec.epochs):
            order = rng.permutation(len(y))
            total = 0.0
            for start in range(0, len(y), spec.batch_size):
                idx = order[start:start + spec.batch_size]
                current = Classifier(tuple(Layer(w, b, a) for w, b, a in zip(weights, biases, acts)), spec.shape)
                outs = _forward(current, X[idx])
                logp = log_softmax(outs[-1])
                total += -logp[np.arange(len(idx)), y[idx]].sum()
                d = np.exp(logp)
                d[np.arange(len(idx)), y[idx]] -= 1.0
                d /= len(idx)
                _, grads = _backward(current, outs, d, want_params=True)
                for i, (gw, gb) in enumerate(grads):
                    weights[i] -= spec.lr * gw
                    biases[i] -= spec.lr * gb
            loss = total / len(y)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(w)) for w in weights):
                raise TrainingError(f"training diverged at epoch {epoch}: loss={loss}; lower the learning rate")
    model = Classifier(tuple(Layer(w, b, a) for w, b, a in zip(weights, biases, acts)), spec.shape)
    report = TrainReport(accuracy(model, train.X, train.y), accuracy(model, test.X, test.y), loss, spec.epochs)
    return model, report, (train, test)


# -- file IO --------------------------------------------------------------------


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def model_to_dict(model: Classifier) -> dict:
    return {
        "classes": model.classes,
        "input_shape": list(model.input_shape),
        "layers": [
            {
                "activation": l.activation,
                "rows": l.weight.shape[0],
                "cols": l.weight.shape[1],
                "weight": l.weight.reshape(-1).tolist(),
                "bias": l.bias.tolist(),
            }
            for l in model.layers
        ],
    }


def save_model(model: Classifier, path) -> None:
    # json writes floats with repr(), which round-trips exactly
    atomic_write_text(path, json.dumps(model_to_dict(model)) + "\n")


def model_from_dict(doc) -> Classifier:
    def need(obj, key, where):
        if not isinstance(obj, dict) or key not in obj:
            raise ModelFormatError(f"missing field {where}{key!r}")
        return obj[key]

    classes = need(doc, "classes", "")
    shape = need(doc, "input_shape", "")
    raw_layers = need(doc, "layers", "")
    if not isinstance(shape, list) or len(shape) != 3 or not all(isinstance(s, int) and s > 0 for s in shape):
        raise ModelFormatError("field 'input_shape' must be three positive integers")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ModelFormatError("field 'layers' must be a non-empty list")
    layers = []
    n_in = math.prod(shape)
    for i, raw in enumerate(raw_layers):
        where = f"layers[{i}]."
        rows, cols = need(raw, "rows", where), need(raw, "cols", where)
        weight, bias = need(raw, "weight", where), need(raw, "bias", where)
        act = need(raw, "activation", where)
        if act not in ACTIVATIONS:
            raise ModelFormatError(f"layer {i}: field 'activation' has unknown value {act!r}")
        if not (isinstance(rows, int) and isinstance(cols, int)) or rows < 1 or cols < 1:
            raise ModelFormatError(f"layer {i}: fields 'rows'/'cols' must be positive integers")
        if cols != n_in:
            raise ModelFormatError(f"layer {i}: 'cols' is {cols} but the previous layer produces {n_in}")
        try:
            w = np.asarray(weight, dtype=np.float64)
            b = np.asarray(bias, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ModelFormatError(f"layer {i}: non-numeric 'weight' or 'bias' ({exc})") from None
        if w.size != rows * cols:
            raise ModelFormatError(f"layer {i}: field 'weight' has {w.size} values, expected {rows}x{cols}")
        if b.size != rows:
            raise ModelFormatError(f"layer {i}: field 'bias' has {b.size} values, expected {rows}")
        layers.append(Layer(w.reshape(rows, cols), b, act))
        n_in = rows
    if n_in != classes:
        raise ModelFormatError(f"field 'classes' is {classes} but the last layer produces {n_in}")
    try:
        return Classifier(tuple(layers), tuple(shape))
    except ShapeError as exc:
        raise ModelFormatError(str(exc)) from None


def load_model(path) -> Classifier:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    return model_from_dict(doc)


def format_image(image: Image) -> str:
    c, h, w = image.shape
    body = "\n".join(" ".join(repr(float(v)) for v in row) for row in image.data.reshape(c * h, w))
    return f"IMGF {c} {h} {w}\n{body}\n"


def save_image(image: Image, path) -> None:
    atomic_write_text(path, format_image(image))


def parse_image(text: str) -> Image:
    lines = text.split("\n", 1)
    head = lines[0].split()
    if len(head) != 4 or head[0] != "IMGF":
        raise ModelFormatError("image header must be 'IMGF C H W'")
    try:
        shape = tuple(int(v) for v in head[1:])
        values = np.array([float(v) for v in (lines[1].split() if len(lines) > 1 else [])])
    except ValueError as exc:
        raise ModelFormatError(f"image file: {exc}") from None
    if values.size != math.prod(shape):
        raise ModelFormatError(f"image body has {values.size} values, header declares {math.prod(shape)}")
    try:
        return Image(values, shape)
    except UsageError as exc:
        raise ModelFormatError(f"image file: {exc}") from None


def load_image(path) -> Image:
    with open(path, encoding="utf-8") as fh:
        return parse_image(fh.read())


def check_finite(*arrays, what="value"):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite {what} encountered")
