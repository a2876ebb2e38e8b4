"""Feed-forward classifier on a flat float64 parameter vector.

The network is a plain MLP (ReLU hidden layers, linear output head) whose
weights live in one flat array with an explicit layout, so exchanging
parameters between clients and server is an array copy. Loss and gradient
reductions over a batch use exactly rounded summation (``math.fsum``),
which makes them bit-identical under any reordering or duplication of the
batch samples; per-sample forward/backward passes are computed in
isolation for the same reason.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# ((shape, offset), ...) alternating weight matrices and bias vectors.
Layout = tuple[tuple[tuple[int, ...], int], ...]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and seed of the classifier."""

    input_dim: int
    hidden_dims: tuple[int, ...] = (64,)
    num_classes: int = 2
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden_dims entries must be >= 1")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation: {self.activation!r}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.num_classes)


def layout_of(config: ModelConfig) -> Layout:
    """Flat layout for ``config``: per layer, weight (in, out) then bias (out,)."""
    layout = []
    offset = 0
    dims = config.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        layout.append(((fan_in, fan_out), offset))
        offset += fan_in * fan_out
        layout.append(((fan_out,), offset))
        offset += fan_out
    return tuple(layout)


@dataclass(eq=False)
class ParameterVector:
    """Flat model weights plus the layout needed to interpret them."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = sum(int(np.prod(shape)) for shape, _ in self.layout)
        if self.values.ndim != 1 or self.values.size != expected:
            raise ValueError(
                f"parameter vector has {self.values.size} values, layout expects {expected}"
            )

    def __len__(self) -> int:
        return self.values.size

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layout)

    def same_layout(self, other: "ParameterVector") -> bool:
        return self.layout == other.layout

    def values_equal(self, other: "ParameterVector") -> bool:
        return self.layout == other.layout and np.array_equal(self.values, other.values)


def _layer_views(params: ParameterVector) -> list[tuple[np.ndarray, np.ndarray]]:
    """(weight, bias) views into the flat array, one pair per layer."""
    views = []
    flat = params.values
    for i in range(0, len(params.layout), 2):
        (w_shape, w_off), (b_shape, b_off) = params.layout[i], params.layout[i + 1]
        w = flat[w_off : w_off + w_shape[0] * w_shape[1]].reshape(w_shape)
        b = flat[b_off : b_off + b_shape[0]]
        views.append((w, b))
    return views


def init_parameters(config: ModelConfig) -> ParameterVector:
    """Glorot-style uniform init: W ~ U(-s, s), s = sqrt(6/(fan_in+fan_out)); biases 0."""
    rng = np.random.default_rng(config.init_seed)
    layout = layout_of(config)
    pieces = []
    dims = config.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        s = math.sqrt(6.0 / (fan_in + fan_out))
        pieces.append(rng.uniform(-s, s, size=fan_in * fan_out))
        pieces.append(np.zeros(fan_out))
    return ParameterVector(np.concatenate(pieces), layout)


def _forward_single(layers, x: np.ndarray) -> np.ndarray:
    a = x
    for w, b in layers[:-1]:
        a = np.maximum(a @ w + b, 0.0)
    w, b = layers[-1]
    return a @ w + b


def forward_logits(params: ParameterVector, config: ModelConfig, features) -> np.ndarray:
    """Logits for one input vector; no softmax applied."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (config.input_dim,):
        raise ValueError(f"expected features of shape ({config.input_dim},), got {x.shape}")
    return _forward_single(_layer_views(params), x)


def forward_batch(params: ParameterVector, config: ModelConfig, features) -> np.ndarray:
    """Logits for a batch of inputs, shape (n, num_classes)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ValueError(f"expected features of shape (n, {config.input_dim}), got {x.shape}")
    return _forward_single(_layer_views(params), x)


def _sample_loss_grad(layers, layout: Layout, x: np.ndarray, y: int):
    """Cross-entropy loss and flat gradient contribution of one sample."""
    acts = [x]
    pre = []
    a = x
    for w, b in layers[:-1]:
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    w_out, b_out = layers[-1]
    logits = a @ w_out + b_out

    m = logits.max()
    ex = np.exp(logits - m)
    se = float(ex.sum())
    loss = m + math.log(se) - logits[y]

    dz = ex / se
    dz[y] -= 1.0

    grads = [None] * len(layers)
    grads[-1] = (np.outer(acts[-1], dz), dz)
    upstream = layers[-1][0] @ dz
    for li in range(len(layers) - 2, -1, -1):
        dz = upstream * (pre[li] > 0.0)
        grads[li] = (np.outer(acts[li], dz), dz)
        upstream = layers[li][0] @ dz

    flat = np.empty(sum(int(np.prod(shape)) for shape, _ in layout))
    for (dw, db), i in zip(grads, range(0, len(layout), 2)):
        (_, w_off), (_, b_off) = layout[i], layout[i + 1]
        flat[w_off : w_off + dw.size] = dw.ravel()
        flat[b_off : b_off + db.size] = db
    return loss, flat


def loss_and_grad(params: ParameterVector, config: ModelConfig, batch):
    """Mean cross-entropy and its gradient over ``batch``.

    ``batch`` needs ``features`` (n, input_dim) and integer ``labels`` (n,).
    Per-sample contributions are reduced with exactly rounded summation so
    the result does not depend on sample order.
    """
    feats = np.asarray(batch.features, dtype=np.float64)
    labels = np.asarray(batch.labels)
    n = labels.size
    if n == 0:
        raise ValueError("empty batch")
    if feats.shape != (n, config.input_dim):
        raise ValueError(f"expected features of shape ({n}, {config.input_dim}), got {feats.shape}")
    if labels.min() < 0 or labels.max() >= config.num_classes:
        raise ValueError(f"labels must lie in [0, {config.num_classes})")

    layers = _layer_views(params)
    losses = np.empty(n)
    contribs = np.empty((n, params.values.size))
    for i in range(n):
        losses[i], contribs[i] = _sample_loss_grad(layers, params.layout, feats[i], int(labels[i]))
    loss = math.fsum(losses) / n
    grad = np.fromiter(
        (math.fsum(contribs[:, j]) for j in range(contribs.shape[1])),
        dtype=np.float64,
        count=contribs.shape[1],
    )
    grad /= n
    return loss, grad


def fedprox_augment(grad, params, global_params, mu: float) -> np.ndarray:
    """Add the proximal-term gradient mu * (theta - theta_g) to ``grad``."""
    g = np.asarray(grad, dtype=np.float64)
    p = np.asarray(params, dtype=np.float64)
    gp = np.asarray(global_params, dtype=np.float64)
    if not (g.shape == p.shape == gp.shape):
        raise ValueError("grad, params and global_params must have the same length")
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    return g + mu * (p - gp)


@dataclass
class OptimizerState:
    """SGD or Adam state; Adam moment arrays exist iff kind == 'adam'."""

    kind: str
    learning_rate: float
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind: {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.kind == "adam" and (self.m is None or self.v is None):
            raise ValueError("adam state requires moment arrays")
        if self.kind == "sgd" and (self.m is not None or self.v is not None):
            raise ValueError("sgd state must not carry moment arrays")
        if self.step < 0:
            raise ValueError("step must be >= 0")

    @classmethod
    def sgd(cls, learning_rate: float) -> "OptimizerState":
        return cls(kind="sgd", learning_rate=learning_rate)

    @classmethod
    def adam(cls, learning_rate: float, size: int) -> "OptimizerState":
        return cls(kind="adam", learning_rate=learning_rate, m=np.zeros(size), v=np.zeros(size))

    def reset(self) -> None:
        """Zero accumulated moments and the step counter (no-op for SGD)."""
        if self.kind == "adam":
            self.m[:] = 0.0
            self.v[:] = 0.0
            self.step = 0


def optimizer_step(params: ParameterVector, grad, state: OptimizerState) -> ParameterVector:
    """One optimizer update; returns new parameters, advances ``state``."""
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != params.values.shape:
        raise ValueError("gradient length does not match parameter vector")
    if state.kind == "sgd":
        new = params.values - state.learning_rate * g
    else:
        state.step += 1
        state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
        state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
        m_hat = state.m / (1.0 - state.beta1**state.step)
        v_hat = state.v / (1.0 - state.beta2**state.step)
        new = params.values - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return ParameterVector(new, params.layout)
