"""Post-hoc attribution baselines: saliency, grad*input, integrated
gradients, occlusion, epsilon-LRP, a LIME-style local surrogate, kernel SHAP,
and an exact brute-force Shapley oracle.

Every explainer is a pure function of (model, x, parameters, seed). Gradient
methods and the Shapley family attribute the pre-softmax logit of the target
class; occlusion attributes the probability drop, matching its removal
semantics. The target class defaults to the model's predicted class.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class Attribution:
    scores: np.ndarray
    target_class: int
    method: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not np.isfinite(self.scores).all():
            raise FloatingPointError(f"{self.method}: non-finite attribution scores")


def _target(model, x, target_class):
    if target_class is not None:
        return int(target_class)
    return int(np.argmax(model.predict_proba(x.reshape(1, -1))[0]))


def _input_gradient(model, x, c):
    xt = Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
    logit = model.logits(xt)[c]
    return ad.grad(logit, xt).data


def saliency(model, x, target_class=None):
    """|d logit_c / dx| elementwise."""
    x = np.asarray(x, dtype=np.float64)
    c = _target(model, x, target_class)
    return Attribution(np.abs(_input_gradient(model, x, c)), c, "saliency")


def grad_times_input(model, x, target_class=None):
    x = np.asarray(x, dtype=np.float64)
    c = _target(model, x, target_class)
    return Attribution(_input_gradient(model, x, c) * x, c, "grad*input")


def integrated_gradients(model, x, baseline=None, steps=50, target_class=None):
    """(x - baseline) times the midpoint-Riemann average gradient along the
    straight path from baseline to x."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    baseline = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    c = _target(model, x, target_class)
    avg = np.zeros_like(x)
    for i in range(steps):
        t = (i + 0.5) / steps
        avg += _input_gradient(model, baseline + t * (x - baseline), c)
    avg /= steps
    return Attribution((x - baseline) * avg, c, "integrated_gradients",
                       {"steps": steps, "baseline": baseline})


def occlusion(model, x, baseline=0.0, group_size=1, target_class=None):
    """Per feature group, the drop in p(c|x) when the group is replaced by
    the baseline value."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    baseline = np.full(n, baseline, dtype=np.float64) if np.isscalar(baseline) \
        else np.asarray(baseline, dtype=np.float64)
    c = _target(model, x, target_class)
    p0 = model.predict_proba(x.reshape(1, -1))[0, c]
    groups = [list(range(i, min(i + group_size, n))) for i in range(0, n, group_size)]
    occluded = np.tile(x, (len(groups), 1))
    for row, idx in enumerate(groups):
        occluded[row, idx] = baseline[idx]
    drops = p0 - model.predict_proba(occluded)[:, c]
    scores = np.zeros(n)
    for row, idx in enumerate(groups):
        scores[idx] = drops[row]
    return Attribution(scores, c, "occlusion", {"group_size": group_size})


def epsilon_lrp(model, x, epsilon=1e-4, target_class=None):
    """Epsilon-stabilized layer-wise relevance propagation through a
    relu/identity MLP, starting from the target logit."""
    layers = getattr(model, "layers", None)
    if layers is None:
        raise ValueError("epsilon-LRP requires a model exposing dense layers")
    for layer in layers:
        if layer.activation not in ("relu", "identity"):
            raise ValueError(f"epsilon-LRP: unsupported activation {layer.activation!r}")
    x = np.asarray(x, dtype=np.float64)
    c = _target(model, x, target_class)
    # forward, saving each layer's input activation
    acts = [x]
    a = x
    for layer in layers:
        pre = a @ layer.weight.data.T + layer.bias.data
        a = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
        acts.append(a)
    relevance = np.zeros(layers[-1].out_width)
    relevance[c] = acts[-1][c]
    for layer, a_in in zip(reversed(layers), reversed(acts[:-1])):
        w = layer.weight.data  # (out, in)
        z = a_in @ w.T + layer.bias.data
        z_stab = z + epsilon * np.where(z >= 0, 1.0, -1.0)
        s = relevance / z_stab
        relevance = a_in * (s @ w)
    return Attribution(relevance, c, "epsilon_lrp", {"epsilon": epsilon})


def _value_fn(model, c):
    if hasattr(model, "decision_function"):
        return lambda X: model.decision_function(X)[:, c]
    return lambda X: model.predict_proba(X)[:, c]


def lime_explain(model, x, n_samples=100, kernel_width=None, ridge=1e-3,
                 noise_scale=0.25, target_class=None, seed=0):
    """Weighted ridge regression coefficients of a local linear surrogate fit
    on Gaussian perturbations of x (weights exp(-d^2 / width^2))."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n_samples < n + 2:
        raise ValueError(f"n_samples must be >= {n + 2} for {n} features")
    c = _target(model, x, target_class)
    width = kernel_width if kernel_width is not None else 0.75 * np.sqrt(n)
    rng = np.random.default_rng(seed)
    samples = x + noise_scale * rng.standard_normal((n_samples, n))
    y = _value_fn(model, c)(samples)
    d2 = ((samples - x) ** 2).sum(axis=1)
    w = np.exp(-d2 / width ** 2)
    A = np.hstack([np.ones((n_samples, 1)), samples - x])
    sw = np.sqrt(w)[:, None]
    gram = (A * sw).T @ (A * sw)
    rhs = (A * sw).T @ (y * sw[:, 0])
    for attempt, reg in enumerate((ridge, ridge * 100.0)):
        try:
            beta = np.linalg.solve(gram + reg * np.eye(n + 1), rhs)
            break
        except np.linalg.LinAlgError:
            if attempt:
                raise
    return Attribution(beta[1:], c, "lime",
                       {"n_samples": n_samples, "kernel_width": width,
                        "ridge": ridge, "noise_scale": noise_scale, "seed": seed})


def _shapley_kernel_sizes(n):
    sizes = np.arange(1, n)
    weights = (n - 1) / (sizes * (n - sizes))
    return sizes, weights / weights.sum()


def kernel_shap(model, x, baseline=None, n_samples=100, target_class=None, seed=0):
    """Shapley value estimate via kernel-weighted least squares over sampled
    coalitions; out-of-coalition features are set to the baseline.

    Sampled coalitions are deduplicated and weighted by the exact Shapley
    kernel (n-1) / (C(n,s) * s * (n-s)), so full coalition coverage recovers
    exact Shapley values. The efficiency constraint (scores sum to
    f(x) - f(baseline)) is enforced exactly by variable elimination."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    baseline = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    c = _target(model, x, target_class)
    value = _value_fn(model, c)
    v_empty = value(baseline.reshape(1, -1))[0]
    v_full = value(x.reshape(1, -1))[0]
    delta = v_full - v_empty
    if n == 1:
        return Attribution(np.array([delta]), c, "kernel_shap",
                           {"n_samples": n_samples, "seed": seed})
    if 2 ** n - 2 <= n_samples:
        # budget covers every proper nonempty coalition: enumerate, which
        # makes the weighted solve agree with exact Shapley values
        Z = np.array([[(i >> j) & 1 for j in range(n)]
                      for i in range(1, 2 ** n - 1)], dtype=np.float64)
    else:
        rng = np.random.default_rng(seed)
        sizes, probs = _shapley_kernel_sizes(n)
        drawn_sizes = rng.choice(sizes, size=n_samples, p=probs)
        seen = {}
        for s in drawn_sizes:
            mask = np.zeros(n)
            mask[rng.choice(n, size=int(s), replace=False)] = 1.0
            seen.setdefault(mask.tobytes(), mask)
        Z = np.array(list(seen.values()))
    s_counts = Z.sum(axis=1)
    w = (n - 1) / (np.array([comb(n, int(s)) for s in s_counts])
                   * s_counts * (n - s_counts))
    masked = np.where(Z > 0, x, baseline)
    v = value(masked)
    # eliminate phi_n via the efficiency constraint
    y = v - v_empty - Z[:, -1] * delta
    A = Z[:, :-1] - Z[:, -1:]
    Aw = A * w[:, None]
    gram = Aw.T @ A
    rhs = Aw.T @ y
    for attempt, reg in enumerate((0.0, 1e-8)):
        try:
            phi_head = np.linalg.solve(gram + reg * np.eye(n - 1), rhs)
            break
        except np.linalg.LinAlgError:
            if attempt:
                raise
    phi = np.append(phi_head, delta - phi_head.sum())
    return Attribution(phi, c, "kernel_shap",
                       {"n_samples": n_samples, "seed": seed, "baseline": baseline})


def exact_shapley(model, x, baseline=None, target_class=None):
    """Exact Shapley values of v(S) = f(x with features outside S set to the
    baseline), by full coalition enumeration. Test oracle; n <= 12."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n > 12:
        raise ValueError(f"exact enumeration limited to 12 features, got {n}")
    baseline = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    c = _target(model, x, target_class)
    value = _value_fn(model, c)
    subsets = []
    index = {}
    for r in range(n + 1):
        for S in combinations(range(n), r):
            index[S] = len(subsets)
            subsets.append(S)
    masked = np.tile(baseline, (len(subsets), 1))
    for row, S in enumerate(subsets):
        masked[row, list(S)] = x[list(S)]
    v = value(masked)
    phi = np.zeros(n)
    fact_weight = {s: 1.0 / (n * comb(n - 1, s)) for s in range(n)}
    for S in subsets:
        s = len(S)
        if s == n:
            continue
        rest = [i for i in range(n) if i not in S]
        for i in rest:
            S_with = tuple(sorted(S + (i,)))
            phi[i] += fact_weight[s] * (v[index[S_with]] - v[index[S]])
    return Attribution(phi, c, "exact_shapley", {"baseline": baseline})


EXPLAINERS = {
    "saliency": saliency,
    "grad*input": grad_times_input,
    "intgrad": integrated_gradients,
    "occlusion": occlusion,
    "elrp": epsilon_lrp,
    "lime": lime_explain,
    "shap": kernel_shap,
}
