"""Scikit-learn style classifier wrapping the self-explaining model and its
three-term training objective."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import autodiff as ad
from .model import build_senn
from .nn import AdamState, adam_step
from .objectives import total_loss, training_objective


class SennClassifier(BaseEstimator, ClassifierMixin):
    """Self-explaining classifier: concept encoder + input-dependent
    parametrizer + additive aggregator, trained with classification loss,
    a gradient-matching robustness penalty (weight `lam`) and, for learned
    concepts, reconstruction + sparsity (weight `xi`).

    Parameters follow sklearn conventions; `random_state` seeds
    initialization, batching and the validation carve-out, making fit
    bit-reproducible.
    """

    def __init__(self, encoder="identity", n_concepts=None, encoder_hidden=(),
                 parametrizer_hidden=(10, 5, 5), aggregator="sum",
                 aggregator_weights=None, hidden_activation="relu",
                 lam=1e-4, xi=2e-5, lr=2e-4, epochs=200, batch_size=64,
                 patience=10, validation_fraction=0.1, random_state=0,
                 verbose=False):
        self.encoder = encoder
        self.n_concepts = n_concepts
        self.encoder_hidden = encoder_hidden
        self.parametrizer_hidden = parametrizer_hidden
        self.aggregator = aggregator
        self.aggregator_weights = aggregator_weights
        self.hidden_activation = hidden_activation
        self.lam = lam
        self.xi = xi
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.verbose = verbose

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y)
        X = np.asarray(X, dtype=np.float64)
        self.classes_ = unique_labels(y)
        class_index = {c: i for i, c in enumerate(self.classes_)}
        y_idx = np.array([class_index[v] for v in y], dtype=np.int64)
        n, m = X.shape[1], len(self.classes_)
        self.n_features_in_ = n

        rng = np.random.default_rng(self.random_state)
        if X_val is None:
            n_val = max(1, int(len(X) * self.validation_fraction))
            perm = rng.permutation(len(X))
            val_idx, train_idx = perm[:n_val], perm[n_val:]
            X_val, y_val_idx = X[val_idx], y_idx[val_idx]
            X_tr, y_tr = X[train_idx], y_idx[train_idx]
        else:
            X_val = np.asarray(X_val, dtype=np.float64)
            y_val_idx = np.array([class_index[v] for v in y_val], dtype=np.int64)
            X_tr, y_tr = X, y_idx

        self.model_ = build_senn(
            n, m, k=self.n_concepts, encoder_kind=self.encoder,
            encoder_hidden=self.encoder_hidden,
            parametrizer_hidden=self.parametrizer_hidden,
            aggregator_kind=self.aggregator,
            aggregator_weights=self.aggregator_weights,
            hidden_activation=self.hidden_activation,
            seed=self.random_state)
        params = self.model_.parameters()
        state = AdamState(lr=self.lr).init(params)

        best_val = np.inf
        best_snapshot = [p.data.copy() for p in params]
        best_epoch = 0
        patience_left = self.patience
        self.history_ = []
        log_rows = min(len(X_tr), 256)
        for epoch in range(self.epochs):
            order = rng.permutation(len(X_tr))
            for start in range(0, len(X_tr), self.batch_size):
                idx = order[start:start + self.batch_size]
                with ad.Tape():
                    loss, _ = training_objective(
                        self.model_, X_tr[idx], y_tr[idx], self.lam, self.xi)
                    grads = ad.grad(loss, params)
                adam_step(params, grads, state)
            breakdown = total_loss(self.model_, X_tr[:log_rows], y_tr[:log_rows],
                                   self.lam, self.xi)
            val_bd = total_loss(self.model_, X_val, y_val_idx, self.lam, self.xi)
            val_acc = float(np.mean(
                self.model_.predict_proba(X_val).argmax(axis=1) == y_val_idx))
            self.history_.append({"epoch": epoch, **breakdown.as_dict(),
                                  "val_loss": val_bd.total, "val_accuracy": val_acc})
            if self.verbose:
                print(f"epoch {epoch}: total={breakdown.total:.4f} "
                      f"val_loss={val_bd.total:.4f} val_acc={val_acc:.4f}")
            if val_bd.total < best_val - 1e-12:
                best_val = val_bd.total
                best_snapshot = [p.data.copy() for p in params]
                best_epoch = epoch
                patience_left = self.patience
            else:
                patience_left -= 1
                if patience_left <= 0:
                    break
        for p, snap in zip(params, best_snapshot):
            p.data[:] = snap
        self.best_epoch_ = best_epoch
        return self

    def _validate_for_predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict_proba(self, X):
        X = self._validate_for_predict(X)
        return self.model_.predict_proba(X)

    def decision_function(self, X):
        X = self._validate_for_predict(X)
        return self.model_.decision_function(X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]

    def explain(self, x):
        """Explanation (concept values, relevances, contributions) for one input."""
        check_is_fitted(self, "model_")
        return self.model_.explain(np.asarray(x, dtype=np.float64))
