"""Feed-forward layers, initialization, losses and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "identity": lambda t: t,
}


@dataclass
class DenseLayer:
    """Affine layer y = x W^T + b followed by an elementwise activation."""

    weight: Tensor  # (out, in)
    bias: Tensor    # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ValueError(
                f"bias shape {self.bias.shape} inconsistent with weight shape {self.weight.shape}")

    @property
    def in_width(self):
        return self.weight.shape[1]

    @property
    def out_width(self):
        return self.weight.shape[0]

    def __call__(self, x):
        pre = ad.add(ad.matmul(x, ad.transpose(self.weight)), self.bias)
        return ACTIVATIONS[self.activation](pre)


def init_dense(in_width, out_width, activation, rng):
    """Kaiming-style uniform fan-in initialization."""
    limit = np.sqrt(6.0 / in_width)
    w = Tensor(rng.uniform(-limit, limit, size=(out_width, in_width)), requires_grad=True)
    b_limit = np.sqrt(1.0 / in_width)
    b = Tensor(rng.uniform(-b_limit, b_limit, size=out_width), requires_grad=True)
    return DenseLayer(w, b, activation)


class MLP:
    """Stack of dense layers; hidden layers share one activation, output is linear."""

    def __init__(self, widths, activation="relu", rng=None, output_activation="identity"):
        if len(widths) < 2:
            raise ValueError("MLP needs at least input and output widths")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = []
        for i in range(len(widths) - 1):
            act = activation if i < len(widths) - 2 else output_activation
            self.layers.append(init_dense(widths[i], widths[i + 1], act, rng))

    def __call__(self, x):
        return mlp_forward(self.layers, x)

    def parameters(self):
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out


def mlp_forward(layers, x):
    """Apply dense layers in sequence; x is (width,) or (batch, width)."""
    width = x.shape[-1]
    for i, layer in enumerate(layers):
        if width != layer.in_width:
            raise ValueError(
                f"layer {i}: input width {width} does not match expected {layer.in_width}")
        x = layer(x)
        width = layer.out_width
    return x


def softmax_cross_entropy(logits, labels):
    """Mean negative log softmax probability of the true class.

    `logits` is (m,) or (batch, m); `labels` an int or int array.
    """
    if logits.ndim == 1:
        logits = ad.reshape(logits, (1, logits.shape[0]))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    m = logits.shape[1]
    if labels.min() < 0 or labels.max() >= m:
        raise ValueError(f"label out of range for {m} classes: {labels}")
    onehot = Tensor(np.eye(m)[labels])
    lse = ad.logsumexp(logits, axis=1, keepdims=True)
    logp = ad.sub(logits, lse)
    return ad.neg(ad.tensor_mean(ad.tensor_sum(ad.mul(onehot, logp), axis=1)))


class MlpClassifier:
    """Plain MLP softmax classifier exposing the surfaces explainers use:
    on-tape `logits`, numpy `decision_function` / `predict_proba`, `.layers`."""

    def __init__(self, mlp):
        self.mlp = mlp
        self.m = mlp.layers[-1].out_width

    @property
    def layers(self):
        return self.mlp.layers

    def parameters(self):
        return self.mlp.parameters()

    def logits(self, x):
        single = x.ndim == 1
        if single:
            x = ad.reshape(x, (1, x.shape[0]))
        out = self.mlp(x)
        return ad.reshape(out, (self.m,)) if single else out

    def decision_function(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        with ad.no_grad():
            return self.mlp(Tensor(X)).data

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators for a fixed parameter list."""

    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def init(self, params):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.step_count = 0
        return self


def adam_step(params, grads, state):
    """One in-place Adam update; raises on NaN gradients (divergence signal)."""
    if not state.m:
        state.init(params)
    state.step_count += 1
    t = state.step_count
    for i, (p, g) in enumerate(zip(params, grads)):
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        if np.isnan(g).any():
            raise FloatingPointError(f"NaN gradient for parameter {i} at step {t}")
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        m_hat = state.m[i] / (1 - state.beta1 ** t)
        v_hat = state.v[i] / (1 - state.beta2 ** t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
