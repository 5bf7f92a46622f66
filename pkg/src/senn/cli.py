"""Command line entry points: train, explain, eval, adversarial, prototypes.

All commands are driven by a JSON experiment config; per-point results are
JSON lines, aggregates are CSV, and any randomness is seeded from the config
(overridable with --seed).
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import click
import numpy as np

from . import explainers as xp
from . import metrics
from .data import load_dataset, load_manifest
from .model import prototype_grounding
from .persistence import (ExperimentConfig, load_checkpoint, save_checkpoint,
                          write_aggregate_csv, write_box_svg, write_jsonl,
                          write_pgm)

METRIC_CHOICES = ["faithfulness", "stability-continuous", "stability-discrete",
                  "gaussian-probe"]


def _load(config_path, seed):
    overrides = {} if seed is None else {"seed": seed}
    cfg = ExperimentConfig.from_json(config_path, overrides=overrides)
    return cfg, Path(cfg.manifest)


def _dataset(cfg, manifest):
    entry = load_manifest(manifest).get(cfg.dataset, {})
    if entry.get("task") == "mnist":
        from .data import load_mnist_idx
        base = Path(entry["path"])
        return load_mnist_idx(
            base / "train-images-idx3-ubyte", base / "train-labels-idx1-ubyte",
            base / "t10k-images-idx3-ubyte", base / "t10k-labels-idx1-ubyte",
            limit=cfg.mnist_limit), entry
    return load_dataset(cfg.dataset, manifest, seed=cfg.seed), entry


def _sample_seed(z, base):
    """Per-input sampling seed: sampling explainers draw fresh perturbations
    for each distinct input (as deployed), yet any rerun is bit-identical."""
    return (zlib.crc32(np.asarray(z, dtype=np.float64).tobytes()) + base) % 2**32


def _explainer_map(cfg, clf, name, target_class):
    """A pure scores(z) function for one attribution method."""
    model = clf.model_

    def run(z):
        z = np.asarray(z, dtype=np.float64)
        if name == "senn":
            return model.explain(z).relevances.ravel()
        fn = xp.EXPLAINERS[name]
        if name in ("lime", "shap"):
            return fn(model, z, n_samples=cfg.explainer_samples,
                      target_class=target_class,
                      seed=_sample_seed(z, cfg.seed)).scores
        return fn(model, z, target_class=target_class).scores

    return run


@click.group()
def main():
    """Self-explaining model training, explanation and evaluation."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", default="out", type=click.Path())
def train(config_path, seed, out_dir):
    """Fit the model and write a checkpoint plus a per-epoch training log."""
    cfg, manifest = _load(config_path, seed)
    split, _ = _dataset(cfg, manifest)
    clf = cfg.build_classifier()
    out = Path(out_dir)
    records = []
    try:
        clf.fit(split.X_train, split.y_train, split.X_val, split.y_val)
    except FloatingPointError as err:
        history = getattr(clf, "history_", [])
        for row in history:
            records.append({**row, "config_hash": cfg.hash(), "seed": cfg.seed})
        last_good = history[-1]["epoch"] if history else None
        records.append({"aborted": True, "error": str(err),
                        "last_good_epoch": last_good,
                        "config_hash": cfg.hash(), "seed": cfg.seed})
        write_jsonl(out / "train_log.jsonl", records)
        raise click.ClickException(
            f"training diverged ({err}); last good epoch: {last_good}")
    for row in clf.history_:
        records.append({**row, "config_hash": cfg.hash(), "seed": cfg.seed})
    write_jsonl(out / "train_log.jsonl", records)
    save_checkpoint(clf, out / "checkpoint", config=cfg)
    test_acc = (float(np.mean(clf.predict(split.X_test) == split.y_test))
                if len(split.y_test) else None)
    summary = {"dataset": cfg.dataset, "best_epoch": clf.best_epoch_,
               "test_accuracy": test_acc, "config_hash": cfg.hash(),
               "seed": cfg.seed, **split.summary()}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2))
    click.echo(json.dumps(summary))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", default="out", type=click.Path())
@click.option("--checkpoint", "ckpt", default=None, type=click.Path(),
              help="Checkpoint directory (default <out>/checkpoint).")
@click.option("--index", type=int, default=0, help="Test-split row to explain.")
def explain(config_path, seed, out_dir, ckpt, index):
    """Write the model's own explanation for one test point."""
    cfg, manifest = _load(config_path, seed)
    split, _ = _dataset(cfg, manifest)
    out = Path(out_dir)
    clf, _ = load_checkpoint(ckpt or out / "checkpoint")
    if not 0 <= index < len(split.X_test):
        raise click.ClickException(
            f"index {index} out of range for {len(split.X_test)} test rows")
    x = split.X_test[index]
    expl = clf.explain(x)
    record = {
        "dataset": cfg.dataset, "point_id": index,
        "predicted_class": expl.predicted_class,
        "true_class": int(split.y_test[index]),
        "concept_values": expl.concept_values.tolist(),
        "relevances": expl.relevances.tolist(),
        "contributions": expl.contributions.tolist(),
        "feature_names": split.feature_names,
        "config_hash": cfg.hash(), "seed": cfg.seed,
    }
    if clf.model_.encoder.kind == "autoencoder":
        record["prototype_indices"] = [
            prototype_grounding(clf.model_, split.X_train, c,
                                min(9, len(split.X_train))).tolist()
            for c in range(clf.model_.encoder.k)]
    path = out / f"explanation_{index}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2))
    click.echo(str(path))


@main.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", default="out", type=click.Path())
@click.option("--checkpoint", "ckpt", default=None, type=click.Path())
@click.option("--metric", type=click.Choice(METRIC_CHOICES), default="faithfulness")
@click.option("--explainers", "methods", default="senn",
              help="Comma-separated: senn,saliency,grad*input,intgrad,occlusion,elrp,lime,shap")
@click.option("--svg/--no-svg", default=False, help="Also write a box plot.")
def eval_cmd(config_path, seed, out_dir, ckpt, metric, methods, svg):
    """Score explanation quality over test points; JSON lines + aggregate CSV."""
    cfg, manifest = _load(config_path, seed)
    split, _ = _dataset(cfg, manifest)
    out = Path(out_dir)
    clf, _ = load_checkpoint(ckpt or out / "checkpoint")
    model = clf.model_
    points = split.X_test[:min(cfg.n_eval_points, len(split.X_test))]
    common = {"dataset": cfg.dataset, "metric": metric,
              "config_hash": cfg.hash(), "seed": cfg.seed}
    records, agg_rows = [], []
    for name in [m.strip() for m in methods.split(",") if m.strip()]:
        if name != "senn" and name not in xp.EXPLAINERS:
            raise click.ClickException(f"unknown explainer {name!r}")
        values = []
        try:
            for pid, x in enumerate(points):
                rec = {**common, "method": name, "point_id": pid}
                target = int(np.argmax(model.predict_proba(x.reshape(1, -1))[0]))
                if metric == "faithfulness":
                    if name == "senn":
                        r = metrics.faithfulness(model, x)
                    else:
                        fn = xp.EXPLAINERS[name]
                        if name in ("lime", "shap"):
                            expl = lambda m, z: fn(m, z, n_samples=cfg.explainer_samples,
                                                   seed=cfg.seed)
                        else:
                            expl = fn
                        r = metrics.faithfulness(model, x, explainer=expl)
                    rec["value"] = r[cfg.correlation]
                elif metric == "stability-continuous":
                    if name == "senn":
                        rep = metrics.lipschitz_gradient_ascent(
                            model, x, cfg.epsilon, steps=cfg.ascent_steps,
                            lr=cfg.ascent_lr, penalty=cfg.ascent_penalty,
                            restarts=cfg.ascent_restarts, seed=cfg.seed)
                    else:
                        budget = cfg.budget_lime if name == "lime" else cfg.budget_other
                        rep = metrics.lipschitz_black_box(
                            _explainer_map(cfg, clf, name, target), x,
                            cfg.epsilon, budget, seed=cfg.seed)
                    rec["value"] = rep.L_hat
                    rec["argmax_point"] = rep.argmax_point.tolist()
                    if rep.flags:
                        rec["flags"] = rep.flags
                elif metric == "stability-discrete":
                    h = model.encode_concepts if name == "senn" else None
                    rep = metrics.lipschitz_discrete(
                        _explainer_map(cfg, clf, name, target), x,
                        split.X_test, cfg.epsilon,
                        h=(lambda z: h(z.reshape(1, -1))[0]) if h else None)
                    rec["value"] = rep.L_hat
                    rec["argmax_point"] = rep.argmax_point.tolist()
                    if rep.flags:
                        rec["flags"] = rep.flags
                else:  # gaussian-probe
                    probe = metrics.gaussian_perturbation_probe(
                        model, _explainer_map(cfg, clf, name, target), x,
                        cfg.noise_sigma, seed=cfg.seed)
                    rec["value"] = probe["ratio"]
                    rec["prob_change"] = probe["prob_change"]
                    if probe["flags"]:
                        rec["flags"] = probe["flags"]
                records.append(rec)
                if rec["value"] is not None:
                    values.append(rec["value"])
        except ValueError as err:
            records.append({**common, "method": name, "point_id": None,
                            "value": None, "skipped": True, "warning": str(err)})
            click.echo(f"warning: {name} skipped for {metric}: {err}", err=True)
            continue
        agg_rows.append((cfg.dataset, name, metric, values))
    write_jsonl(out / f"report_{metric}.jsonl", records)
    write_aggregate_csv(out / f"aggregate_{metric}.csv", agg_rows)
    if svg and agg_rows:
        write_box_svg(out / f"aggregate_{metric}.svg",
                      [r[1] for r in agg_rows], [r[3] for r in agg_rows],
                      title=f"{cfg.dataset}: {metric}", ylabel=metric)
    click.echo(str(out / f"aggregate_{metric}.csv"))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", default="out", type=click.Path())
@click.option("--checkpoint", "ckpt", default=None, type=click.Path())
@click.option("--explainer", "method", default="senn")
@click.option("--index", type=int, default=0)
def adversarial(config_path, seed, out_dir, ckpt, method, index):
    """Search the epsilon-ball for the input maximizing explanation change."""
    cfg, manifest = _load(config_path, seed)
    split, entry = _dataset(cfg, manifest)
    out = Path(out_dir)
    clf, _ = load_checkpoint(ckpt or out / "checkpoint")
    model = clf.model_
    if not 0 <= index < len(split.X_test):
        raise click.ClickException(
            f"index {index} out of range for {len(split.X_test)} test rows")
    x = split.X_test[index]
    target = int(np.argmax(model.predict_proba(x.reshape(1, -1))[0]))
    if method == "senn":
        rep = metrics.lipschitz_gradient_ascent(
            model, x, cfg.epsilon, steps=cfg.ascent_steps, lr=cfg.ascent_lr,
            penalty=cfg.ascent_penalty, restarts=cfg.ascent_restarts,
            seed=cfg.seed)
    elif method in xp.EXPLAINERS:
        budget = cfg.budget_lime if method == "lime" else cfg.budget_other
        rep = metrics.lipschitz_black_box(
            _explainer_map(cfg, clf, method, target), x, cfg.epsilon, budget,
            seed=cfg.seed)
    else:
        raise click.ClickException(f"unknown explainer {method!r}")
    e0, e1 = rep.explanation_pair
    record = {
        "dataset": cfg.dataset, "method": method, "point_id": index,
        "metric": "adversarial", "value": rep.L_hat,
        "argmax_point": rep.argmax_point.tolist(),
        "epsilon": cfg.epsilon, "strategy": rep.strategy, "budget": rep.budget,
        "explanation_at_x": np.asarray(e0).tolist(),
        "explanation_at_argmax": np.asarray(e1).tolist(),
        "flags": rep.flags, "config_hash": cfg.hash(), "seed": cfg.seed,
    }
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"adversarial_{method}_{index}.json"
    path.write_text(json.dumps(record, indent=2))
    if entry.get("task") == "mnist":
        write_pgm(out / f"adversarial_{method}_{index}_x.pgm", x)
        write_pgm(out / f"adversarial_{method}_{index}_xstar.pgm", rep.argmax_point)
    click.echo(str(path))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", default="out", type=click.Path())
@click.option("--checkpoint", "ckpt", default=None, type=click.Path())
@click.option("--count", type=int, default=9, help="Prototypes per concept.")
def prototypes(config_path, seed, out_dir, ckpt, count):
    """Ground each concept in its maximally-activating training examples."""
    cfg, manifest = _load(config_path, seed)
    split, entry = _dataset(cfg, manifest)
    out = Path(out_dir)
    clf, _ = load_checkpoint(ckpt or out / "checkpoint")
    model = clf.model_
    count = min(count, len(split.X_train))
    record = {"dataset": cfg.dataset, "count": count,
              "config_hash": cfg.hash(), "seed": cfg.seed, "concepts": []}
    for c in range(model.encoder.k):
        idx = prototype_grounding(model, split.X_train, c, count)
        record["concepts"].append({"concept": c, "indices": idx.tolist()})
        if entry.get("task") == "mnist":
            for rank, i in enumerate(idx):
                write_pgm(out / "prototypes" / f"concept{c}_rank{rank}.pgm",
                          split.X_train[i])
    out.mkdir(parents=True, exist_ok=True)
    (out / "prototypes.json").write_text(json.dumps(record, indent=2))
    click.echo(str(out / "prototypes.json"))


if __name__ == "__main__":
    main()
