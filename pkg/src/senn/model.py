"""Self-explaining model: concept encoder, input-dependent parametrizer,
additive aggregator, and explanation extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP


class ConceptEncoder:
    """Maps inputs to k concept activations; optionally an autoencoder."""

    def __init__(self, kind, k, encoder=None, decoder=None):
        if kind not in ("identity", "autoencoder"):
            raise ValueError(f"unknown encoder kind {kind!r}")
        if kind == "autoencoder" and (encoder is None or decoder is None):
            raise ValueError("autoencoder kind requires encoder and decoder networks")
        self.kind = kind
        self.k = k
        self.encoder = encoder
        self.decoder = decoder

    def encode(self, x):
        if self.kind == "identity":
            return x
        return self.encoder(x)

    def reconstruct(self, x):
        if self.kind == "identity":
            raise ValueError("no decoder: identity encoder cannot reconstruct")
        return self.decoder(self.encode(x))

    def parameters(self):
        params = []
        if self.encoder is not None:
            params += self.encoder.parameters()
        if self.decoder is not None:
            params += self.decoder.parameters()
        return params


class Parametrizer:
    """Network producing a (k, m) relevance matrix for each input."""

    def __init__(self, net, k, m):
        self.net = net
        self.k = k
        self.m = m

    def __call__(self, x):
        raw = self.net(x)  # (batch, k*m)
        batch = raw.shape[0]
        return ad.reshape(raw, (batch, self.k, self.m))

    def parameters(self):
        return self.net.parameters()


class Aggregator:
    """Additively separable combiner of per-concept contributions.

    `sum` adds contributions; `positive-affine` scales concept i by a fixed
    nonnegative weight before adding (keeps every logit monotone in each
    contribution).
    """

    def __init__(self, kind="sum", weights=None):
        if kind not in ("sum", "positive-affine"):
            raise ValueError(f"unknown aggregator kind {kind!r}")
        if kind == "positive-affine":
            weights = np.asarray(weights, dtype=np.float64)
            if (weights < 0).any():
                raise ValueError("positive-affine aggregator weights must be nonnegative")
        self.kind = kind
        self.weights = weights

    def __call__(self, contributions):
        # contributions: (batch, k, m)
        if self.kind == "positive-affine":
            w = Tensor(self.weights.reshape(1, -1, 1))
            contributions = ad.mul(contributions, w)
        return ad.tensor_sum(contributions, axis=1)


@dataclass
class Explanation:
    """Per-input explanation: concept values, relevances and contributions."""

    concept_values: np.ndarray   # (k,)
    relevances: np.ndarray       # (k, m)
    contributions: np.ndarray    # (k, m)
    predicted_class: int


class SennModel:
    """f(x) = g(theta_1(x) h_1(x), ..., theta_k(x) h_k(x)) with softmax output."""

    def __init__(self, encoder, parametrizer, aggregator, m):
        if encoder.k != parametrizer.k:
            raise ValueError(
                f"encoder produces {encoder.k} concepts but parametrizer expects {parametrizer.k}")
        self.encoder = encoder
        self.parametrizer = parametrizer
        self.aggregator = aggregator
        self.m = m
        self.n = parametrizer.net.layers[0].in_width

    def parameters(self):
        return self.encoder.parameters() + self.parametrizer.parameters()

    def _check_width(self, x):
        if x.shape[-1] != self.n:
            raise ValueError(f"input width {x.shape[-1]} does not match model width {self.n}")

    def forward(self, x):
        """On-tape forward pass. Returns (logits, concepts, relevances),
        each batched: (B, m), (B, k), (B, k, m)."""
        self._check_width(x)
        h = self.encoder.encode(x)
        theta = self.parametrizer(x)
        batch, k = h.shape[0], self.encoder.k
        contributions = ad.mul(theta, ad.reshape(h, (batch, k, 1)))
        logits = self.aggregator(contributions)
        return logits, h, theta

    def logits(self, x):
        """On-tape pre-softmax outputs for a single input or a batch."""
        single = x.ndim == 1
        if single:
            x = ad.reshape(x, (1, x.shape[0]))
        out, _, _ = self.forward(x)
        return ad.reshape(out, (self.m,)) if single else out

    def predict(self, x):
        """Class distribution (softmax of aggregated logits), on-tape."""
        single = x.ndim == 1
        if single:
            x = ad.reshape(x, (1, x.shape[0]))
        logits, _, _ = self.forward(x)
        probs = ad.softmax(logits, axis=1)
        return ad.reshape(probs, (self.m,)) if single else probs

    def predict_proba(self, X):
        """Probabilities for a numpy batch, off-tape."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        with ad.no_grad():
            return self.predict(Tensor(X)).data

    def decision_function(self, X):
        """Pre-softmax logits for a numpy batch, off-tape."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        with ad.no_grad():
            out, _, _ = self.forward(Tensor(X))
            return out.data

    def encode_concepts(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self._check_width(X)
        with ad.no_grad():
            return self.encoder.encode(Tensor(X)).data

    def reconstruct(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self._check_width(X)
        with ad.no_grad():
            return self.encoder.reconstruct(Tensor(X)).data

    def explain(self, x):
        """Explanation for a single input: {(h_i(x), theta_i(x))} plus the
        per-class contributions theta_i(x) * h_i(x)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("explain takes a single input vector")
        with ad.no_grad():
            logits, h, theta = self.forward(Tensor(x.reshape(1, -1)))
        h = h.data[0]
        theta = theta.data[0]
        contributions = theta * h[:, None]
        probs = _softmax_np(logits.data[0])
        return Explanation(
            concept_values=h,
            relevances=theta,
            contributions=contributions,
            predicted_class=int(np.argmax(probs)),
        )


def _softmax_np(z):
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def prototype_grounding(model, X, concept_index, count):
    """Indices of the `count` dataset rows with the largest activation of one
    concept, descending, ties broken by dataset index."""
    X = np.asarray(X, dtype=np.float64)
    if not 0 <= concept_index < model.encoder.k:
        raise ValueError(f"concept index {concept_index} out of range")
    if count > len(X):
        raise ValueError(f"requested {count} prototypes from {len(X)} rows")
    vals = model.encode_concepts(X)[:, concept_index]
    order = np.lexsort((np.arange(len(X)), -vals))
    return order[:count]


def build_senn(n, m, k=None, encoder_kind="identity",
               encoder_hidden=(), parametrizer_hidden=(10, 5, 5),
               aggregator_kind="sum", aggregator_weights=None,
               hidden_activation="relu", seed=0):
    """Construct an untrained model with freshly initialized networks."""
    rng = np.random.default_rng(seed)
    if encoder_kind == "identity":
        k = n if k is None else k
        if k != n:
            raise ValueError("identity encoder requires k == n")
        encoder = ConceptEncoder("identity", k)
    else:
        if k is None:
            raise ValueError("autoencoder encoder requires explicit k")
        enc = MLP([n, *encoder_hidden, k], activation=hidden_activation, rng=rng)
        dec = MLP([k, *reversed(encoder_hidden), n], activation=hidden_activation, rng=rng)
        encoder = ConceptEncoder("autoencoder", k, enc, dec)
    net = MLP([n, *parametrizer_hidden, k * m], activation=hidden_activation, rng=rng)
    parametrizer = Parametrizer(net, k, m)
    aggregator = Aggregator(aggregator_kind, aggregator_weights)
    return SennModel(encoder, parametrizer, aggregator, m)
