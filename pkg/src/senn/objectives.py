"""Three-term training objective: classification loss, gradient-matching
robustness penalty, and autoencoder reconstruction with a sparsity term.

The robustness penalty compares the input Jacobian of the pre-softmax logits
against the locally-linear surrogate theta(x)^T J_h(x). The Frobenius norm is
optimized in squared form (smooth everywhere) and reported unsquared; at an
exact zero the unsquared value and its gradient are both exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import softmax_cross_entropy


@dataclass
class LossBreakdown:
    classification: float
    robustness: float
    reconstruction: float
    lam: float
    xi: float
    total: float

    def as_dict(self):
        return {
            "classification": self.classification,
            "robustness": self.robustness,
            "reconstruction": self.reconstruction,
            "lambda": self.lam,
            "xi": self.xi,
            "total": self.total,
        }


def batch_jacobian(outputs, X, create_graph=False):
    """Per-example Jacobian (B, d, n) of row-wise outputs (B, d) w.r.t. X (B, n).

    Valid when example b's outputs depend only on X[b] (true for all
    feed-forward models here), so one backward pass per output dim suffices.
    """
    d = outputs.shape[1]
    rows = []
    for j in range(d):
        col = ad.tensor_sum(outputs[:, j])
        gj = ad.grad(col, X, create_graph=create_graph)
        rows.append(ad.reshape(gj, (X.shape[0], 1, X.shape[1])))
    return ad.concat(rows, axis=1)


def _safe_sqrt(s):
    """Elementwise sqrt with value and gradient exactly 0 where s == 0."""
    mask = s.data > 0
    filler = Tensor(np.where(mask, 0.0, 1.0))
    return ad.mul(ad.sqrt(ad.add(s, filler)), Tensor(mask.astype(np.float64)))


def _robustness_sq_per_example(model, x, create_graph=True):
    """Squared Frobenius mismatch per example, on-tape: shape (B,)."""
    X = Tensor(np.atleast_2d(x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)),
               requires_grad=True)
    logits, h, theta = model.forward(X)
    jac_f = batch_jacobian(logits, X, create_graph=create_graph)        # (B, m, n)
    theta_t = ad.permute(theta, (0, 2, 1))                              # (B, m, k)
    if model.encoder.kind == "identity":
        surrogate = theta_t                                             # J_h = I
    else:
        jac_h = batch_jacobian(h, X, create_graph=create_graph)         # (B, k, n)
        surrogate = ad.bmatmul(theta_t, jac_h)
    delta = ad.sub(jac_f, surrogate)
    return ad.tensor_sum(ad.mul(delta, delta), axis=(1, 2))             # (B,)


def robustness_loss(model, x, create_graph=True, squared=False):
    """Batch-mean Frobenius mismatch between the logit Jacobian and
    theta(x)^T J_h(x); on-tape, differentiable w.r.t. model parameters.

    `x` is a Tensor (B, n) or numpy array; it is re-wrapped as a
    differentiation leaf. Per-example norms are averaged over the batch.
    """
    per_example = _robustness_sq_per_example(model, x, create_graph=create_graph)
    if squared:
        return ad.tensor_mean(per_example)
    return ad.tensor_mean(_safe_sqrt(per_example))


def reconstruction_loss(x, x_hat, concept_values, sparsity_weight=1.0):
    """MSE(x, x_hat) plus sparsity_weight * mean |h_i(x)|."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if tuple(x.shape) != tuple(x_hat.shape):
        raise ValueError(f"reconstruction: shapes {x.shape} vs {x_hat.shape}")
    diff = ad.sub(x_hat, x)
    mse = ad.tensor_mean(ad.mul(diff, diff))
    sparsity = ad.tensor_mean(ad.absolute(concept_values))
    return ad.add(mse, ad.mul(sparsity, sparsity_weight))


def _check_finite(name, value):
    if not np.isfinite(value):
        raise FloatingPointError(f"{name} loss is not finite: {value}")
    return value


def training_objective(model, X, y, lam, xi, skip_inactive=True):
    """On-tape scalar optimized by the training loop, plus its breakdown.

    The optimized robustness term is the squared Frobenius form; the
    breakdown carries the unsquared value and satisfies
    total == classification + lam * robustness + xi * reconstruction.
    Zero-weight terms are skipped (reported as 0) when `skip_inactive`.
    """
    if lam < 0 or xi < 0:
        raise ValueError("lam and xi must be nonnegative")
    X_t = Tensor(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    logits, h, _ = model.forward(X_t)
    cls = softmax_cross_entropy(logits, y)
    loss = cls
    rob_value = 0.0
    if lam > 0 or not skip_inactive:
        per_example = _robustness_sq_per_example(model, X_t, create_graph=True)
        rob_value = _check_finite(
            "robustness", float(np.mean(np.sqrt(np.maximum(per_example.data, 0.0)))))
        if lam > 0:
            loss = ad.add(loss, ad.mul(ad.tensor_mean(per_example), lam))
    rec_value = 0.0
    if model.encoder.kind == "autoencoder" and (xi > 0 or not skip_inactive):
        x_hat = model.encoder.decoder(h)
        rec = reconstruction_loss(X_t, x_hat, h)
        rec_value = _check_finite("reconstruction", rec.item())
        if xi > 0:
            loss = ad.add(loss, ad.mul(rec, xi))
    cls_value = _check_finite("classification", cls.item())
    breakdown = LossBreakdown(
        classification=cls_value,
        robustness=rob_value,
        reconstruction=rec_value,
        lam=lam,
        xi=xi,
        total=cls_value + lam * rob_value + xi * rec_value,
    )
    return loss, breakdown


def total_loss(model, X, y, lam, xi):
    """Batch-mean LossBreakdown with every term evaluated (reporting surface)."""
    _, breakdown = training_objective(model, X, y, lam, xi, skip_inactive=False)
    return breakdown
