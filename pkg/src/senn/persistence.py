"""Experiment configuration, model checkpointing, and report emission."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .estimator import SennClassifier

CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class TruncatedBlobError(CheckpointError):
    pass


@dataclass
class ExperimentConfig:
    """Full experiment provenance; unknown JSON fields are rejected."""

    dataset: str = "breast-cancer"
    manifest: str = "data/manifest.json"
    encoder: str = "identity"
    n_concepts: int | None = None
    encoder_hidden: tuple = ()
    parametrizer_hidden: tuple = (10, 5, 5)
    aggregator: str = "sum"
    aggregator_weights: tuple | None = None
    hidden_activation: str = "relu"
    lam: float = 1e-4
    xi: float = 2e-5
    lr: float = 2e-4
    epochs: int = 200
    batch_size: int = 64
    patience: int = 10
    seed: int = 0
    # metric settings
    epsilon: float = 0.1
    budget_lime: int = 40
    budget_other: int = 200
    correlation: str = "pearson"
    n_eval_points: int = 10
    ascent_steps: int = 200
    ascent_lr: float = 0.01
    ascent_penalty: float = 10.0
    ascent_restarts: int = 3
    noise_sigma: float = 0.05
    explainer_samples: int = 100
    mnist_limit: int | None = None

    @classmethod
    def from_json(cls, path, overrides=None):
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if overrides:
            raw.update(overrides)
        cfg = cls(**raw)
        for name in ("encoder_hidden", "parametrizer_hidden", "aggregator_weights"):
            v = getattr(cfg, name)
            if isinstance(v, list):
                setattr(cfg, name, tuple(v))
        return cfg

    def as_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def hash(self):
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def build_classifier(self):
        return SennClassifier(
            encoder=self.encoder, n_concepts=self.n_concepts,
            encoder_hidden=self.encoder_hidden,
            parametrizer_hidden=self.parametrizer_hidden,
            aggregator=self.aggregator, aggregator_weights=self.aggregator_weights,
            hidden_activation=self.hidden_activation, lam=self.lam, xi=self.xi,
            lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
            patience=self.patience, random_state=self.seed)


def _named_parameters(model):
    out = []

    def add_mlp(prefix, mlp):
        for i, layer in enumerate(mlp.layers):
            out.append((f"{prefix}.layer{i}.weight", layer.weight))
            out.append((f"{prefix}.layer{i}.bias", layer.bias))

    if model.encoder.encoder is not None:
        add_mlp("encoder", model.encoder.encoder)
    if model.encoder.decoder is not None:
        add_mlp("decoder", model.encoder.decoder)
    add_mlp("parametrizer", model.parametrizer.net)
    return out


def save_checkpoint(clf, path, config=None):
    """Write manifest.json + params.bin (little-endian float64, manifest
    order). Byte-identical for identical models."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    model = clf.model_
    named = _named_parameters(model)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "architecture": {
            "n": model.n, "m": model.m,
            "encoder": model.encoder.kind, "n_concepts": model.encoder.k,
            "encoder_hidden": list(clf.encoder_hidden),
            "parametrizer_hidden": list(clf.parametrizer_hidden),
            "aggregator": model.aggregator.kind,
            "aggregator_weights": (None if model.aggregator.weights is None
                                   else list(model.aggregator.weights)),
            "hidden_activation": clf.hidden_activation,
        },
        "classes": [_jsonable(c) for c in clf.classes_],
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in named],
        "config_hash": config.hash() if config is not None else None,
        "seed": clf.random_state,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    blob = b"".join(t.data.astype("<f8").tobytes() for _, t in named)
    (path / "params.bin").write_bytes(blob)
    return path


def _jsonable(v):
    return v.item() if isinstance(v, np.generic) else v


def load_checkpoint(path):
    """Rebuild the classifier from manifest.json + params.bin; version,
    per-tensor shape, and blob length are all checked."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"checkpoint version {manifest.get('format_version')} != {CHECKPOINT_VERSION}")
    arch = manifest["architecture"]
    clf = SennClassifier(
        encoder=arch["encoder"], n_concepts=arch["n_concepts"],
        encoder_hidden=tuple(arch["encoder_hidden"]),
        parametrizer_hidden=tuple(arch["parametrizer_hidden"]),
        aggregator=arch["aggregator"],
        aggregator_weights=(None if arch["aggregator_weights"] is None
                            else tuple(arch["aggregator_weights"])),
        hidden_activation=arch["hidden_activation"],
        random_state=manifest.get("seed", 0))
    from .model import build_senn
    clf.model_ = build_senn(
        arch["n"], arch["m"], k=arch["n_concepts"], encoder_kind=arch["encoder"],
        encoder_hidden=tuple(arch["encoder_hidden"]),
        parametrizer_hidden=tuple(arch["parametrizer_hidden"]),
        aggregator_kind=arch["aggregator"],
        aggregator_weights=arch["aggregator_weights"],
        hidden_activation=arch["hidden_activation"], seed=manifest.get("seed", 0))
    clf.classes_ = np.array(manifest["classes"])
    clf.n_features_in_ = arch["n"]
    named = _named_parameters(clf.model_)
    if len(named) != len(manifest["tensors"]):
        raise ShapeMismatchError(
            f"{len(manifest['tensors'])} tensors in manifest, model has {len(named)}")
    blob = (path / "params.bin").read_bytes()
    offset = 0
    for (name, tensor), entry in zip(named, manifest["tensors"]):
        shape = tuple(entry["shape"])
        if shape != tuple(tensor.shape):
            raise ShapeMismatchError(
                f"tensor {entry['name']}: manifest shape {shape} != model shape {tensor.shape}")
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise TruncatedBlobError(
                f"params.bin truncated at tensor {entry['name']}: "
                f"need {offset + nbytes} bytes, have {len(blob)}")
        tensor.data[:] = np.frombuffer(blob, dtype="<f8", count=count,
                                       offset=offset).reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise TruncatedBlobError(
            f"params.bin has {len(blob) - offset} trailing bytes")
    return clf, manifest


# ---------------------------------------------------------------------------
# report emission


def write_jsonl(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True, default=_np_default) + "\n")
    return path


def _np_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v)}")


def write_aggregate_csv(path, rows):
    """Rows of (dataset, method, metric, values-list) summarized as quartiles."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["dataset", "method", "metric", "q1", "median", "q3", "mean", "n"])
        for dataset, method, metric, values in rows:
            arr = np.asarray([v for v in values if v is not None], dtype=np.float64)
            if len(arr) == 0:
                writer.writerow([dataset, method, metric, "", "", "", "", 0])
                continue
            q1, med, q3 = np.percentile(arr, [25, 50, 75])
            writer.writerow([dataset, method, metric,
                             f"{q1:.10g}", f"{med:.10g}", f"{q3:.10g}",
                             f"{arr.mean():.10g}", len(arr)])
    return path


def write_box_svg(path, labels, value_lists, title="", ylabel=""):
    """Optional convenience plot of the aggregate distributions."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, axis = plt.subplots(figsize=(1.2 + 0.9 * len(labels), 3.2))
    data = [[v for v in vals if v is not None] for vals in value_lists]
    axis.boxplot(data, tick_labels=labels)
    axis.set_title(title)
    axis.set_ylabel(ylabel)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def write_pgm(path, image, lo=None, hi=None):
    """8-bit binary PGM (P5) writer for square grayscale images."""
    img = np.asarray(image, dtype=np.float64)
    side = int(round(np.sqrt(img.size)))
    img = img.reshape(side, side)
    lo = img.min() if lo is None else lo
    hi = img.max() if hi is None else hi
    scale = 255.0 / (hi - lo) if hi > lo else 1.0
    pix = np.clip((img - lo) * scale, 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(f"P5\n{side} {side}\n255\n".encode())
        f.write(pix.tobytes())
    return path
