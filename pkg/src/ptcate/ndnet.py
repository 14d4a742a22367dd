"""Small feed-forward networks with hand-written backprop and Adam.

Parameters are stored as a tuple of ``(W, b)`` pairs, one per layer, with
``W`` of shape ``(fan_in, fan_out)``. Every loss used by the package is a
function of the network output only, so a loss is passed around as a
callable ``out -> (value, dvalue/dout)`` and chained through the layers by
:func:`net_backward`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "sigmoid", "softplus_plus_a")

LossClosure = Callable[[np.ndarray], "tuple[float, np.ndarray]"]
Layer = "tuple[np.ndarray, np.ndarray]"


class NonFiniteLossError(FloatingPointError):
    """Raised when a loss or its gradient stops being finite."""


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    hidden_activation: str = "tanh"
    output_activation: str = "identity"
    # floor of the softplus_plus_a output activation
    a: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim <= 0 or any(h <= 0 for h in self.hidden_dims):
            raise ValueError(f"layer widths must be positive: {self.input_dim}, {self.hidden_dims}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if self.output_activation == "softplus_plus_a" and not self.a > 0:
            raise ValueError("softplus_plus_a requires a > 0")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, 1]

    @property
    def n_params(self) -> int:
        dims = self.layer_dims
        return sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "a": self.a,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(**d)


NetParams = tuple  # tuple of (W, b) pairs


def net_init(spec: NetSpec, seed: int) -> NetParams:
    """Uniform fan-in initialisation, zero biases."""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params.append((W, np.zeros(fan_out)))
    return tuple(params)


def zeros_like(params: NetParams) -> NetParams:
    return tuple((np.zeros_like(W), np.zeros_like(b)) for W, b in params)


def flatten(params: NetParams) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in params])


def unflatten(vec: np.ndarray, spec: NetSpec) -> NetParams:
    dims = spec.layer_dims
    out, pos = [], 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = vec[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = vec[pos:pos + fan_out]
        pos += fan_out
        out.append((W.copy(), b.copy()))
    if pos != vec.size:
        raise ValueError(f"expected {pos} parameters, got {vec.size}")
    return tuple(out)


def _check_input(params: NetParams, spec: NetSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"input has {X.shape[1]} columns, network expects {spec.input_dim}")
    if len(params) != len(spec.layer_dims) - 1:
        raise ValueError("parameter list does not match the network spec")
    return X


def _hidden(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _output(z: np.ndarray, spec: NetSpec) -> np.ndarray:
    kind = spec.output_activation
    if kind == "identity":
        return z
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return expit(z)
    return np.logaddexp(0.0, z) + spec.a


def _output_grad(z: np.ndarray, out: np.ndarray, spec: NetSpec) -> np.ndarray:
    kind = spec.output_activation
    if kind == "identity":
        return np.ones_like(z)
    if kind == "tanh":
        return 1.0 - out**2
    if kind == "sigmoid":
        return out * (1.0 - out)
    return expit(z)


def _forward_cache(params, spec, X):
    acts = [X]
    h = X
    for W, b in params[:-1]:
        h = _hidden(h @ W + b, spec.hidden_activation)
        acts.append(h)
    W, b = params[-1]
    z = (h @ W + b)[:, 0]
    return acts, z, _output(z, spec)


def net_forward(params: NetParams, spec: NetSpec, X: np.ndarray) -> np.ndarray:
    """One scalar output per row of ``X``."""
    X = _check_input(params, spec, X)
    return _forward_cache(params, spec, X)[2]


def l2_penalty(params: NetParams, weight_decay: float) -> float:
    if weight_decay == 0.0:
        return 0.0
    return weight_decay * sum(float(np.sum(W * W)) for W, _ in params)


def net_backward(
    params: NetParams,
    spec: NetSpec,
    X: np.ndarray,
    loss: LossClosure,
    weight_decay: float = 0.0,
) -> tuple[float, NetParams]:
    """Loss value and its exact gradient with respect to every parameter.

    ``weight_decay`` adds ``weight_decay * sum ||W||^2`` over weight matrices.
    """
    X = _check_input(params, spec, X)
    acts, z, out = _forward_cache(params, spec, X)
    value, dout = loss(out)
    value = float(value) + l2_penalty(params, weight_decay)
    dout = np.asarray(dout, dtype=float)
    if not np.isfinite(value) or not np.all(np.isfinite(dout)):
        raise NonFiniteLossError(f"non-finite loss {value!r}")

    delta = (dout * _output_grad(z, out, spec))[:, None]
    grads = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        gW = acts[i].T @ delta
        if weight_decay:
            gW = gW + 2.0 * weight_decay * W
        grads[i] = (gW, delta.sum(axis=0))
        if i > 0:
            delta = delta @ W.T
            h = acts[i]
            if spec.hidden_activation == "tanh":
                delta = delta * (1.0 - h**2)
            else:
                delta = delta * (h > 0)
    return value, tuple(grads)


def mse_loss(target: np.ndarray) -> LossClosure:
    target = np.asarray(target, dtype=float)

    def loss(out):
        r = out - target
        return float(np.mean(r**2)), 2.0 * r / r.size

    return loss


def bce_loss(labels: np.ndarray) -> LossClosure:
    """Binary cross-entropy on a probability output (sigmoid activation)."""
    labels = np.asarray(labels, dtype=float)

    def loss(p):
        p = np.clip(p, 1e-12, 1.0 - 1e-12)
        n = p.size
        value = -np.mean(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))
        return float(value), (p - labels) / (p * (1.0 - p)) / n

    return loss


@dataclass(frozen=True)
class AdamState:
    m: NetParams
    v: NetParams
    t: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: NetParams, learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls(m=zeros_like(params), v=zeros_like(params), learning_rate=learning_rate, **kw)


def adam_step(state: AdamState, params: NetParams, grads: NetParams) -> tuple[AdamState, NetParams]:
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new_m, new_v, new_p = [], [], []
    for (p_w, p_b), (g_w, g_b), (m_w, m_b), (v_w, v_b) in zip(params, grads, state.m, state.v):
        layer = []
        for p, g, m, v in ((p_w, g_w, m_w, v_w), (p_b, g_b, m_b, v_b)):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            step = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
            layer.append((p - step, m, v))
        new_p.append((layer[0][0], layer[1][0]))
        new_m.append((layer[0][1], layer[1][1]))
        new_v.append((layer[0][2], layer[1][2]))
    return replace(state, m=tuple(new_m), v=tuple(new_v), t=t), tuple(new_p)


@dataclass
class TrainResult:
    params: NetParams
    state: AdamState
    losses: list = field(default_factory=list)
    rng: np.random.Generator | None = None


def train(
    params: NetParams,
    spec: NetSpec,
    X: np.ndarray,
    make_loss: Callable[[np.ndarray], LossClosure],
    epochs: int,
    learning_rate: float = 1e-3,
    weight_decay: float = 0.0,
    batch_size: int | None = None,
    seed: int = 0,
    state: AdamState | None = None,
    rng: np.random.Generator | None = None,
) -> TrainResult:
    """Run ``epochs`` passes of Adam.

    ``make_loss(idx)`` returns the loss closure for the rows ``idx``. With
    ``batch_size=None`` (or ``>= n``) each epoch is a single full-batch step
    and no randomness is consumed. Passing back ``state`` and ``rng`` from a
    previous result continues training exactly where it stopped.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if state is None:
        state = AdamState.create(params, learning_rate)
    if rng is None:
        rng = np.random.default_rng(seed)
    full = np.arange(n)
    losses = []
    for _ in range(epochs):
        if batch_size is None or batch_size >= n:
            batches = [full]
        else:
            perm = rng.permutation(n)
            batches = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
        total = 0.0
        for idx in batches:
            value, grads = net_backward(params, spec, X[idx], make_loss(idx), weight_decay)
            state, params = adam_step(state, params, grads)
            total += value * len(idx)
        losses.append(total / n)
    return TrainResult(params=params, state=state, losses=losses, rng=rng)


@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    worst_parameter_index: int
    h: float
    n_params: int


def finite_diff_check(
    params: NetParams,
    spec: NetSpec,
    X: np.ndarray,
    loss: LossClosure,
    h: float = 1e-5,
    weight_decay: float = 0.0,
) -> GradCheckReport:
    """Compare :func:`net_backward` to central differences, one parameter at a time."""
    if not h > 0:
        raise ValueError("h must be positive")
    _, grads = net_backward(params, spec, X, loss, weight_decay)
    analytic = flatten(grads)
    theta = flatten(params)

    def value_at(vec):
        p = unflatten(vec, spec)
        out = net_forward(p, spec, X)
        return float(loss(out)[0]) + l2_penalty(p, weight_decay)

    worst, worst_i = 0.0, 0
    for i in range(theta.size):
        plus, minus = theta.copy(), theta.copy()
        plus[i] += h
        minus[i] -= h
        numeric = (value_at(plus) - value_at(minus)) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        err = abs(analytic[i] - numeric) / denom
        if err > worst:
            worst, worst_i = err, i
    return GradCheckReport(worst, worst_i, h, theta.size)


def params_to_json(params: NetParams) -> list:
    return [{"W": W.tolist(), "b": b.tolist()} for W, b in params]


def params_from_json(layers: Sequence[dict]) -> NetParams:
    return tuple(
        (np.asarray(layer["W"], dtype=float).reshape(len(layer["W"]), -1), np.asarray(layer["b"], dtype=float))
        for layer in layers
    )
