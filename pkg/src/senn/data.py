"""Dataset ingestion: UCI-style CSVs, MNIST IDX files, and the COMPAS
recidivism CSV with its inconsistent-label filter."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class DatasetSplit:
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    scaler_mean: np.ndarray   # fit on train rows only
    scaler_std: np.ndarray
    feature_names: list
    n: int
    m: int

    def summary(self):
        return {"n": self.n, "m": self.m,
                "sizes": [len(self.y_train), len(self.y_val), len(self.y_test)]}


def _standardize(X_train, X_val, X_test):
    mean = X_train.mean(axis=0)
    std = X_train.std(axis=0)
    std = np.where(std == 0, 1.0, std)  # constant columns become all-zero
    return ((X_train - mean) / std, (X_val - mean) / std, (X_test - mean) / std,
            mean, std)


def _split_indices(n_rows, seed):
    # 80/10/10 with deterministic shuffle
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_rows)
    a, b = int(n_rows * 0.8), int(n_rows * 0.9)
    return perm[:a], perm[a:b], perm[b:]


def _make_split(X, y, feature_names, seed):
    tr, va, te = _split_indices(len(X), seed)
    X_train, X_val, X_test, mean, std = _standardize(X[tr], X[va], X[te])
    classes = np.unique(y)
    y_map = {c: i for i, c in enumerate(classes)}
    y = np.array([y_map[v] for v in y], dtype=np.int64)
    return DatasetSplit(X_train, y[tr], X_val, y[va], X_test, y[te],
                        mean, std, list(feature_names), X.shape[1], len(classes))


def load_uci_csv(path, label_column, seed=0):
    """Load a headered numeric CSV, shuffle, split 80/10/10 and standardize
    with train-only statistics. Missing or non-numeric feature cells are
    errors (no imputation)."""
    df = pd.read_csv(path)
    if label_column not in df.columns:
        raise ValueError(f"label column {label_column!r} not in {list(df.columns)}")
    features = [c for c in df.columns if c != label_column]
    for col in features:
        bad = df[col].isna()
        if bad.any():
            row = int(np.argmax(bad.values))
            raise ValueError(f"missing value at row {row}, column {col!r}")
        if not np.issubdtype(df[col].dtype, np.number):
            coerced = pd.to_numeric(df[col], errors="coerce")
            row = int(np.argmax(coerced.isna().values))
            raise ValueError(f"non-numeric feature cell at row {row}, column {col!r}")
    X = df[features].to_numpy(dtype=np.float64)
    y = df[label_column].to_numpy()
    return _make_split(X, y, features, seed)


def _read_idx(path, expect_magic):
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated IDX header at offset {len(raw)}")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != expect_magic:
        raise ValueError(f"{path}: bad IDX magic 0x{magic:08x} at offset 0, "
                         f"expected 0x{expect_magic:08x}")
    if expect_magic == IDX_IMAGES_MAGIC:
        if len(raw) < 16:
            raise ValueError(f"{path}: truncated IDX dimensions at offset {len(raw)}")
        rows, cols = struct.unpack(">II", raw[8:16])
        need = 16 + count * rows * cols
        if len(raw) < need:
            raise ValueError(f"{path}: truncated IDX payload at offset {len(raw)}, need {need}")
        data = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
        return data.reshape(count, rows * cols).astype(np.float64)
    need = 8 + count
    if len(raw) < need:
        raise ValueError(f"{path}: truncated IDX payload at offset {len(raw)}, need {need}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_mnist_idx(train_images, train_labels, test_images=None, test_labels=None,
                   limit=None):
    """Parse big-endian IDX image/label files; flatten to 784-vectors, scale
    by the global train mean/std, carve 10% of train for validation. The
    official test pair, when given, becomes the test split."""
    X = _read_idx(train_images, IDX_IMAGES_MAGIC)
    y = _read_idx(train_labels, IDX_LABELS_MAGIC)
    if len(X) != len(y):
        raise ValueError(f"image count {len(X)} != label count {len(y)}")
    if limit is not None:
        X, y = X[:limit], y[:limit]
    n_val = len(X) // 10
    X_train, y_train = X[n_val:], y[n_val:]
    X_val, y_val = X[:n_val], y[:n_val]
    mean, std = X_train.mean(), X_train.std()
    std = std if std > 0 else 1.0
    if test_images is not None:
        X_test = _read_idx(test_images, IDX_IMAGES_MAGIC)
        y_test = _read_idx(test_labels, IDX_LABELS_MAGIC)
        if len(X_test) != len(y_test):
            raise ValueError(f"image count {len(X_test)} != label count {len(y_test)}")
    else:
        X_test = np.empty((0, X.shape[1]))
        y_test = np.empty(0, dtype=np.int64)
    scale = lambda Z: (Z - mean) / std
    names = [f"px{i}" for i in range(X.shape[1])]
    return DatasetSplit(scale(X_train), y_train, scale(X_val), y_val,
                        scale(X_test), y_test,
                        np.full(X.shape[1], mean), np.full(X.shape[1], std),
                        names, X.shape[1], 10)


COMPAS_FEATURES = ["age", "sex", "race", "juv_fel_count", "juv_misd_count",
                   "juv_other_count", "priors_count", "c_charge_degree"]
COMPAS_CATEGORICAL = ["sex", "race", "c_charge_degree"]
COMPAS_LABEL = "two_year_recid"


def majority_filter(X, y, threshold=0.8):
    """Within each group of identical feature vectors, keep only the rows
    with the majority label when that majority is at least `threshold`;
    drop the whole group otherwise. Idempotent."""
    keep = np.zeros(len(X), dtype=bool)
    groups = {}
    for i, row in enumerate(X):
        groups.setdefault(row.tobytes(), []).append(i)
    for idx in groups.values():
        labels = y[idx]
        values, counts = np.unique(labels, return_counts=True)
        top = counts.argmax()
        if counts[top] / len(idx) >= threshold:
            for i in idx:
                if y[i] == values[top]:
                    keep[i] = True
    return keep


def preprocess_compas(path, seed=0, features=None):
    """ProPublica COMPAS CSV: one-hot categoricals, priors rescaled to [0,1]
    by min-max, inconsistent-label groups filtered at an 80% majority, then
    split and standardized like the UCI datasets."""
    features = COMPAS_FEATURES if features is None else features
    df = pd.read_csv(path)
    missing = [c for c in [*features, COMPAS_LABEL] if c not in df.columns]
    if missing:
        raise ValueError(f"expected columns missing from {path}: {missing}")
    df = df.dropna(subset=[*features, COMPAS_LABEL]).reset_index(drop=True)
    cols = []
    names = []
    for col in features:
        if col in COMPAS_CATEGORICAL:
            levels = sorted(df[col].astype(str).unique())
            for lv in levels:
                cols.append((df[col].astype(str) == lv).to_numpy(dtype=np.float64))
                names.append(f"{col}={lv}")
        elif col == "priors_count":
            v = df[col].to_numpy(dtype=np.float64)
            lo, hi = v.min(), v.max()
            cols.append((v - lo) / (hi - lo) if hi > lo else np.zeros_like(v))
            names.append(col)
        else:
            cols.append(df[col].to_numpy(dtype=np.float64))
            names.append(col)
    X = np.column_stack(cols)
    y = df[COMPAS_LABEL].to_numpy(dtype=np.int64)
    keep = majority_filter(X, y)
    X, y = X[keep], y[keep]
    return _make_split(X, y, names, seed)


def rescale_priors(values):
    """Min-max rescale an ordinal count column to [0, 1]."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    return (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)


def load_manifest(path):
    """JSON array of {name, path, label_column, task}; paths relative to the
    manifest file."""
    path = Path(path)
    entries = json.loads(path.read_text())
    out = {}
    for e in entries:
        out[e["name"]] = {**e, "path": str((path.parent / e["path"]).resolve())}
    return out


def load_dataset(name, manifest_path, seed=0):
    entries = load_manifest(manifest_path)
    if name not in entries:
        raise ValueError(f"dataset {name!r} not in manifest ({sorted(entries)})")
    e = entries[name]
    if e.get("task") == "compas":
        return preprocess_compas(e["path"], seed=seed)
    return load_uci_csv(e["path"], e["label_column"], seed=seed)
