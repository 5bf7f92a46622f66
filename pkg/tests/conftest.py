"""Shared fixtures: dataset splits and trained models reused across tests."""

import numpy as np
import pytest

from senn import autodiff as ad
from senn.autodiff import Tensor
from senn.data import load_dataset
from senn.estimator import SennClassifier
from senn.nn import MLP, AdamState, MlpClassifier, adam_step, softmax_cross_entropy

DATA_MANIFEST = "data/manifest.json"
LAMBDAS = (0.0, 1e-4, 1e-2, 1.0)


@pytest.fixture(scope="session")
def bc_split():
    return load_dataset("breast-cancer", DATA_MANIFEST, seed=0)


@pytest.fixture(scope="session")
def wine_split():
    return load_dataset("wine", DATA_MANIFEST, seed=0)


@pytest.fixture(scope="session")
def bc_models(bc_split):
    """Breast-cancer classifiers trained across the regularization sweep."""
    out = {}
    for lam in LAMBDAS:
        out[lam] = SennClassifier(lam=lam, epochs=200, random_state=0).fit(
            bc_split.X_train, bc_split.y_train, bc_split.X_val, bc_split.y_val)
    return out


@pytest.fixture(scope="session")
def wine_model(wine_split):
    return SennClassifier(lam=1e-2, epochs=200, random_state=0).fit(
        wine_split.X_train, wine_split.y_train, wine_split.X_val, wine_split.y_val)


@pytest.fixture(scope="session")
def trained_mlp(bc_split):
    """Plain MLP softmax classifier trained on breast-cancer (for the
    attribution-axiom checks that want a trained non-additive model)."""
    mlp = MLP([bc_split.n, 16, bc_split.m], activation="tanh",
              rng=np.random.default_rng(0))
    params = mlp.parameters()
    state = AdamState(lr=1e-3).init(params)
    X, y = bc_split.X_train, bc_split.y_train
    rng = np.random.default_rng(0)
    for _ in range(60):
        order = rng.permutation(len(X))
        for start in range(0, len(X), 64):
            idx = order[start:start + 64]
            with ad.Tape():
                loss = softmax_cross_entropy(mlp(Tensor(X[idx])), y[idx])
                grads = ad.grad(loss, params)
            adam_step(params, grads, state)
    return MlpClassifier(mlp)
