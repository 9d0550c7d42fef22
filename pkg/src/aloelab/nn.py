"""Dense feed-forward classifiers with exact reverse-mode gradients.

Everything is double precision. A forward pass exposes every hidden
post-activation vector plus the final logits, so detector scores can hook
any layer. A backward pass returns gradients with respect to all
parameters and with respect to the input in one sweep; losses are small
objects that seed the reverse pass with per-layer gradients, which lets
callers differentiate quantities that touch hidden features (not just the
logits).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Array = np.ndarray


def _relu(z: Array) -> Array:
    return np.maximum(z, 0.0)


def _drelu(h: Array) -> Array:
    # derivative from the post-activation value; exact zeros get slope 0
    return (h > 0.0).astype(np.float64)


def _tanh(z: Array) -> Array:
    return np.tanh(z)


def _dtanh(h: Array) -> Array:
    return 1.0 - h * h

_ACTIVATIONS = {"relu": (_relu, _drelu), "tanh": (_tanh, _dtanh)}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of a dense classifier: input_dim -> hidden_dims -> num_classes."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if any(d < 1 for d in self.hidden_dims):
            raise ValueError(f"hidden dims must be >= 1, got {self.hidden_dims}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.num_classes]


class Model:
    """A dense network: weights[i] has shape (dims[i+1], dims[i]).

    Parameter arrays are frozen after construction; optimizer steps build a
    new Model rather than mutating in place.
    """

    def __init__(self, spec: ModelSpec, weights: list[Array], biases: list[Array], seed: int = 0):
        dims = spec.layer_dims
        if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
            raise ValueError("wrong number of parameter tensors for spec")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i}: parameter shapes {w.shape}/{b.shape} "
                                 f"do not match spec dims {dims[i + 1]}x{dims[i]}")
        self.spec = spec
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        for a in (*self.weights, *self.biases):
            a.flags.writeable = False
        self.seed = int(seed)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def num_hidden(self) -> int:
        return len(self.weights) - 1

    def with_params(self, weights: list[Array], biases: list[Array]) -> "Model":
        return Model(self.spec, weights, biases, self.seed)


def init_model(spec: ModelSpec, seed: int) -> Model:
    """Glorot-uniform weights in [-a, a] with a = sqrt(6/(fan_in+fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    weights, biases = [], []
    for i in range(len(dims) - 1):
        a = np.sqrt(6.0 / (dims[i] + dims[i + 1]))
        weights.append(rng.uniform(-a, a, size=(dims[i + 1], dims[i])))
        biases.append(np.zeros(dims[i + 1]))
    return Model(spec, weights, biases, seed)


def zero_model(spec: ModelSpec) -> Model:
    dims = spec.layer_dims
    weights = [np.zeros((dims[i + 1], dims[i])) for i in range(len(dims) - 1)]
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    return Model(spec, weights, biases, seed=0)


@dataclass
class FeatureStack:
    """Per-layer post-activation features plus the final logits for one input."""

    hidden: list[Array]
    logits: Array

    def entries(self) -> list[Array]:
        return [*self.hidden, self.logits]

    def __len__(self) -> int:
        return len(self.hidden) + 1


@dataclass
class GradReport:
    """Gradients of a scalar loss w.r.t. every parameter and the input."""

    grad_weights: list[Array]
    grad_biases: list[Array]
    grad_input: Array
    value: float


@dataclass
class BatchBackward:
    """Reverse pass over a batch: per-item values and input gradients, and
    parameter gradients of the SUM of the per-item losses."""

    values: Array        # (n,)
    input_grads: Array   # (n, input_dim) gradient of each item's own loss
    grad_weights: list[Array]
    grad_biases: list[Array]


def forward_batch(model: Model, X: Array) -> tuple[list[Array], Array]:
    """Hidden post-activations and logits for a batch, X of shape (n, input_dim)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.spec.input_dim:
        raise ValueError(f"input shape {X.shape} does not match input_dim {model.spec.input_dim}")
    act, _ = _ACTIVATIONS[model.spec.activation]
    h = X
    hidden = []
    for i in range(model.num_hidden):
        h = act(h @ model.weights[i].T + model.biases[i])
        hidden.append(h)
    logits = h @ model.weights[-1].T + model.biases[-1]
    return hidden, logits


def forward(model: Model, x: Array) -> FeatureStack:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D input vector, got shape {x.shape}")
    hidden, logits = forward_batch(model, x[None, :])
    return FeatureStack(hidden=[h[0] for h in hidden], logits=logits[0])


def softmax_t(logits: Array, T: float = 1.0) -> Array:
    """Temperature-scaled softmax, computed with a max shift for stability.

    Works on the last axis for 1-D or 2-D inputs. T=1 is the plain softmax.
    """
    if T <= 0:
        raise ValueError(f"temperature must be positive, got {T}")
    z = np.asarray(logits, dtype=np.float64) / T
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: Array, T: float = 1.0) -> Array:
    if T <= 0:
        raise ValueError(f"temperature must be positive, got {T}")
    z = np.asarray(logits, dtype=np.float64) / T
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def ce_label(logits: Array, y: int) -> float:
    """-log softmax(logits)[y], evaluated in log space."""
    logits = np.asarray(logits, dtype=np.float64)
    K = logits.shape[-1]
    if not 0 <= y < K:
        raise ValueError(f"label {y} out of range for {K} classes")
    return float(-log_softmax(logits)[y])


def ce_uniform(logits: Array) -> float:
    """Cross-entropy from the model distribution to the uniform target.

    Equals -(1/K) sum_i log softmax(logits)_i; minimized (= log K) exactly
    when the softmax is uniform.
    """
    return float(-log_softmax(logits).mean(axis=-1))


def entropy(p: Array) -> float:
    """Shannon entropy in nats of a probability vector; 0*log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("probabilities must be nonnegative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities must sum to 1, got {p.sum()}")
    pos = p > 0
    return float(-(p[pos] * np.log(p[pos])).sum())


# ---------------------------------------------------------------------------
# Losses. Each exposes value_and_grads(entries) -> (values, seeds) where
# entries is the list of batch feature matrices (hidden layers then logits),
# values is (n,), and seeds is a list aligned with entries holding the
# gradient of the per-item loss w.r.t. that entry (None where untouched).
# ---------------------------------------------------------------------------

class CeLabel:
    """-log F(x)_y on the logits."""

    def __init__(self, y):
        self.y = np.atleast_1d(np.asarray(y, dtype=np.int64))

    def value_and_grads(self, entries: list[Array]):
        logits = entries[-1]
        n, K = logits.shape
        y = np.broadcast_to(self.y, (n,))
        if np.any((y < 0) | (y >= K)):
            raise ValueError(f"label out of range for {K} classes")
        logp = log_softmax(logits)
        values = -logp[np.arange(n), y]
        dlogits = np.exp(logp)
        dlogits[np.arange(n), y] -= 1.0
        return values, [None] * (len(entries) - 1) + [dlogits]


class CeUniform:
    """Cross-entropy of F(x) against the uniform distribution over K classes."""

    def value_and_grads(self, entries: list[Array]):
        logits = entries[-1]
        K = logits.shape[1]
        logp = log_softmax(logits)
        values = -logp.mean(axis=1)
        dlogits = np.exp(logp) - 1.0 / K
        return values, [None] * (len(entries) - 1) + [dlogits]


class EntropyLoss:
    """Shannon entropy of F(x)."""

    def value_and_grads(self, entries: list[Array]):
        logits = entries[-1]
        logp = log_softmax(logits)
        p = np.exp(logp)
        plogp = p * logp  # underflows cleanly to 0 when p does
        values = -plogp.sum(axis=1)
        # dH/dz_j = -p_j (log p_j + H)
        dlogits = -(plogp + p * values[:, None])
        return values, [None] * (len(entries) - 1) + [dlogits]


class LogMaxSoftmax:
    """log S(x; T) = log max_i softmax_T(logits)_i (ties: lowest index)."""

    def __init__(self, T: float = 1.0):
        if T <= 0:
            raise ValueError(f"temperature must be positive, got {T}")
        self.T = float(T)

    def value_and_grads(self, entries: list[Array]):
        logits = entries[-1]
        n = logits.shape[0]
        m = np.argmax(logits, axis=1)
        logp = log_softmax(logits, self.T)
        values = logp[np.arange(n), m]
        dlogits = -np.exp(logp) / self.T
        dlogits[np.arange(n), m] += 1.0 / self.T
        return values, [None] * (len(entries) - 1) + [dlogits]


def backward_batch(model: Model, X: Array, loss) -> BatchBackward:
    """One reverse sweep for a whole batch.

    Parameter gradients are for the sum of per-item losses; input_grads[i]
    is the gradient of item i's own loss (items are independent).
    """
    X = np.asarray(X, dtype=np.float64)
    hidden, logits = forward_batch(model, X)
    entries = [*hidden, logits]
    values, seeds = loss.value_and_grads(entries)
    if len(seeds) != len(entries):
        raise ValueError("loss returned a seed list of the wrong length")
    _, dact = _ACTIVATIONS[model.spec.activation]

    acts = [X, *hidden]  # inputs to each layer
    grad_w = [None] * model.num_layers
    grad_b = [None] * model.num_layers

    g = seeds[-1]
    if g is None:
        g = np.zeros_like(logits)
    grad_w[-1] = g.T @ acts[-1]
    grad_b[-1] = g.sum(axis=0)
    g = g @ model.weights[-1]  # now grad w.r.t. last hidden (or input)

    for i in range(model.num_hidden - 1, -1, -1):
        if seeds[i] is not None:
            g = g + seeds[i]
        g = g * dact(hidden[i])
        grad_w[i] = g.T @ acts[i]
        grad_b[i] = g.sum(axis=0)
        g = g @ model.weights[i]

    return BatchBackward(values=values, input_grads=g, grad_weights=grad_w, grad_biases=grad_b)


def backward(model: Model, x: Array, loss) -> GradReport:
    """Gradients of a scalar loss at a single input, w.r.t. parameters and x."""
    x = np.asarray(x, dtype=np.float64)
    bb = backward_batch(model, x[None, :], loss)
    return GradReport(grad_weights=bb.grad_weights, grad_biases=bb.grad_biases,
                      grad_input=bb.input_grads[0], value=float(bb.values[0]))


@dataclass
class SgdState:
    """Momentum buffers; the one mutable piece of training state."""

    vel_w: list[Array]
    vel_b: list[Array]

    @classmethod
    def zeros(cls, model: Model) -> "SgdState":
        return cls([np.zeros_like(w) for w in model.weights],
                   [np.zeros_like(b) for b in model.biases])


def sgd_momentum_step(model: Model, grads: tuple[list[Array], list[Array]],
                      lr: float, momentum: float, weight_decay: float,
                      state: SgdState | None = None) -> tuple[Model, SgdState]:
    """v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v."""
    gw, gb = grads
    if len(gw) != model.num_layers or len(gb) != model.num_layers:
        raise ValueError("gradient list length does not match model layers")
    if state is None:
        state = SgdState.zeros(model)
    new_w, new_b = [], []
    for i in range(model.num_layers):
        if gw[i].shape != model.weights[i].shape or gb[i].shape != model.biases[i].shape:
            raise ValueError(f"gradient shape mismatch at layer {i}")
        state.vel_w[i] = momentum * state.vel_w[i] + (gw[i] + weight_decay * model.weights[i])
        state.vel_b[i] = momentum * state.vel_b[i] + (gb[i] + weight_decay * model.biases[i])
        new_w.append(model.weights[i] - lr * state.vel_w[i])
        new_b.append(model.biases[i] - lr * state.vel_b[i])
    return model.with_params(new_w, new_b), state


# ---------------------------------------------------------------------------
# Flat text serialization: `aloe-model v1`, spec fields, then one line per
# parameter tensor with 17-significant-digit decimals (exact round trip).
# ---------------------------------------------------------------------------

def _fmt(values: Array) -> str:
    return ",".join(f"{v:.17g}" for v in np.asarray(values).ravel())


def model_to_lines(model: Model) -> list[str]:
    spec = model.spec
    lines = [
        "aloe-model v1",
        f"input_dim {spec.input_dim}",
        "hidden_dims " + ",".join(str(d) for d in spec.hidden_dims),
        f"num_classes {spec.num_classes}",
        f"activation {spec.activation}",
        f"seed {model.seed}",
    ]
    for i in range(model.num_layers):
        lines.append(f"W{i} " + _fmt(model.weights[i]))
        lines.append(f"b{i} " + _fmt(model.biases[i]))
    return lines


def save_model(model: Model, path) -> None:
    with open(path, "w") as f:
        f.write("\n".join(model_to_lines(model)) + "\n")


def _parse_floats(text: str) -> Array:
    return np.array([float(t) for t in text.split(",")] if text.strip() else [], dtype=np.float64)


def _field(lines: list[str], idx: int, name: str) -> str:
    parts = lines[idx].split(" ", 1)
    if parts[0] != name:
        raise ValueError(f"model file: expected field {name!r} on line {idx + 1}, got {lines[idx]!r}")
    return parts[1] if len(parts) > 1 else ""

def model_from_lines(lines: list[str]) -> tuple[Model, list[str]]:
    """Parse a model section; returns the model and any remaining lines."""
    if not lines or lines[0].strip() != "aloe-model v1":
        raise ValueError("model file: missing 'aloe-model v1' header")
    hidden_raw = _field(lines, 2, "hidden_dims").strip()
    spec = ModelSpec(
        input_dim=int(_field(lines, 1, "input_dim")),
        hidden_dims=tuple(int(d) for d in hidden_raw.split(",")) if hidden_raw else (),
        num_classes=int(_field(lines, 3, "num_classes")),
        activation=_field(lines, 4, "activation").strip(),
    )
    seed = int(_field(lines, 5, "seed"))
    dims = spec.layer_dims
    weights, biases = [], []
    idx = 6
    for i in range(len(dims) - 1):
        w = _parse_floats(_field(lines, idx, f"W{i}"))
        weights.append(w.reshape(dims[i + 1], dims[i]))
        biases.append(_parse_floats(_field(lines, idx + 1, f"b{i}")))
        idx += 2
    return Model(spec, weights, biases, seed), lines[idx:]


def load_model(path) -> Model:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    model, _ = model_from_lines(lines)
    return model
