"""Command line entry point: one subcommand per pipeline stage.

Every run writes its resolved configuration next to its outputs; CSV files
start with a ``# config_hash=...`` comment.  Progress goes to stderr as JSON
lines ``{"stage", "done", "total", "queries"}``.
"""
import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, SyntheticSpec, generate_synthetic, load_idx, load_mnist, subset
from .errors import BudgetExhaustedError, ConfigError, FormatError, NumericalError, PreconditionError
from .geometry import (
    RobustnessConfig,
    config_hash,
    distance_heatmap,
    group_references,
    read_records_csv,
    robustness_batch,
    write_matrix_csv,
    write_records_csv,
)
from .labels import LabelConfig, TransferSet, build_transfer_set
from .nn import DistillConfig, evaluate, load_checkpoint, softmax
from .oracle import NetworkOracle, load_teacher
from .pipelines import METHODS, TeacherRecipe, default_recipe, distill, train_teacher
from .storage import read_records
from .synth import AugmentationPolicy, GenerationConfig, augment_and_recover, generate_pseudo_samples, generation_report

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_NUMERIC = 0, 2, 3, 4

COMMANDS = ("train-teacher", "robustness", "labels", "distill", "generate", "sweep", "evaluate", "whitebox-heatmap")
SWEEP_AXES = ("query_budget", "iterations", "sample_count", "temperature")


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    out_dir: str = "."
    dataset: dict = field(default_factory=dict)
    test_dataset: dict = None
    oracle: dict = field(default_factory=dict)
    architecture: str = "lenet-tiny"
    student: str = "lenet-tiny-half"
    method: str = "db3kd"
    training: dict = field(default_factory=dict)
    surrogate_training: dict = None
    robustness: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)
    generation: dict = field(default_factory=dict)
    augmentation: dict = None
    records: str = None
    samples: str = None
    transfer: str = None
    checkpoint: str = None
    sweep: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("the run configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**doc)

    def to_dict(self):
        return asdict(self)


def _build(kind, doc, what):
    try:
        return kind(**(doc or {}))
    except TypeError as exc:
        raise ConfigError(f"bad {what} section: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"bad {what} section: {exc}") from None


def _strict(doc, allowed, what):
    doc = doc or {}
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {what}: {', '.join(unknown)}")
    return doc


class Run:
    """One command invocation: resolved config, output dir and progress."""

    def __init__(self, command, config, stream=None):
        self.command = command
        self.config = config
        self.out = Path(config.out_dir)
        self.stream = stream if stream is not None else sys.stderr
        # where the outputs go and how many threads compute them do not change them
        hashed = {k: v for k, v in config.to_dict().items() if k not in ("out_dir", "workers")}
        self.digest = config_hash({"command": command, **hashed})

    def start(self):
        self.out.mkdir(parents=True, exist_ok=True)
        doc = {"command": self.command, "config_hash": self.digest, "version": __version__, **self.config.to_dict()}
        (self.out / "config.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    def progress(self, stage, done, total, queries=0):
        self.stream.write(json.dumps({"stage": stage, "done": done, "total": total, "queries": int(queries)}) + "\n")
        self.stream.flush()

    def write_csv(self, name, header, rows):
        buf = io.StringIO()
        buf.write(f"# config_hash={self.digest}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        (self.out / name).write_text(buf.getvalue())

    def write_json(self, name, doc):
        (self.out / name).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---- inputs -----------------------------------------------------------------

DATASET_KEYS = ("kind", "path", "images", "labels", "split", "per_class", "subset_seed", "synthetic")


def load_dataset(doc, default_split="train"):
    doc = _strict(doc, DATASET_KEYS, "dataset")
    kind = doc.get("kind")
    split = doc.get("split", default_split)
    if kind == "mnist":
        ds = load_mnist(_path(doc, "path"), split)
    elif kind == "idx":
        ds = load_idx(_path(doc, "images"), _path(doc, "labels"), split)
    elif kind == "synthetic":
        spec = _build(SyntheticSpec, doc.get("synthetic"), "dataset.synthetic")
        if split != "train":
            spec = replace(spec, sample_stream=spec.sample_stream or 1)
        ds, _ = generate_synthetic(spec)
    elif kind == "records":
        ds = _records_dataset(_path(doc, "path"))
    else:
        raise ConfigError(f"dataset kind must be mnist, idx, synthetic or records, got {kind!r}")
    if doc.get("per_class") is not None:
        ds = subset(ds, int(doc["per_class"]), int(doc.get("subset_seed", 0)))
    return ds


def _records_dataset(stem):
    """A cached dataset or a pseudo/transfer set read back as a Dataset."""
    x, lab, manifest = read_records(stem)
    if manifest["L"] == 1:
        y = lab[:, 0].astype(np.int64)
    elif "top1" in manifest:
        y = np.asarray(manifest["top1"], dtype=np.int64)
    else:
        y = np.argmax(lab, axis=1)
    return Dataset(x, y, manifest.get("split", "records"))


def _path(doc, key):
    if not doc.get(key):
        raise ConfigError(f"dataset needs a {key!r} entry")
    path = Path(doc[key])
    if not path.exists() and not path.with_suffix(".json").exists():
        raise ConfigError(f"path not found: {path}")
    return path


def load_oracle(doc, dataset_doc=None):
    """Teacher from a checkpoint, an analytic JSON file, or a synthetic task."""
    doc = _strict(doc, ("checkpoint", "analytic", "synthetic", "budget"), "oracle")
    budget = doc.get("budget")
    if doc.get("checkpoint"):
        return NetworkOracle(_checkpoint(doc["checkpoint"]), budget)
    if doc.get("analytic"):
        src = doc["analytic"]
        if isinstance(src, str) and not Path(src).exists():
            raise ConfigError(f"path not found: {src}")
        return load_teacher(src, budget)
    if doc.get("synthetic") or (dataset_doc or {}).get("kind") == "synthetic":
        spec_doc = doc.get("synthetic") if isinstance(doc.get("synthetic"), dict) else (dataset_doc or {}).get("synthetic")
        _, teacher = generate_synthetic(_build(SyntheticSpec, spec_doc, "oracle.synthetic"))
        if budget is not None:
            teacher.reset_budget(budget)
        return teacher
    raise ConfigError("oracle needs one of checkpoint, analytic or synthetic")


def _checkpoint(stem):
    stem = Path(stem)
    if not stem.with_suffix(".json").exists():
        raise ConfigError(f"checkpoint not found: {stem}")
    return load_checkpoint(stem)


def _training(cfg, section="training", base=None):
    doc = getattr(cfg, section)
    return _build(DistillConfig, {**(base or {}), **(doc or {}), "seed": cfg.seed}, section)


# ---- commands ---------------------------------------------------------------

def cmd_train_teacher(run):
    cfg = run.config
    train = load_dataset(cfg.dataset)
    test = load_dataset(cfg.test_dataset, "test") if cfg.test_dataset else None
    base = asdict(TeacherRecipe().training)
    recipe = TeacherRecipe(cfg.architecture, _training(cfg, base=base))
    total = recipe.training.epochs
    net, history = train_teacher(
        train, recipe, seed=cfg.seed, eval_data=None if test is None else (test.images, test.labels),
        callback=lambda row: run.progress("train-teacher", row["epoch"] + 1, total),
    )
    net.save(run.out / "teacher", seed=cfg.seed, epoch=total)
    _write_history(run, history)
    summary = {"final": history[-1], "parameters": int(net.parameters.size)}
    if test is not None:
        summary["test_accuracy"] = evaluate(net, test.images, test.labels).accuracy
    run.write_json("summary.json", summary)


def _write_history(run, history):
    keys = list(history[0]) if history else ["epoch"]
    run.write_csv("metrics.csv", keys, [[row.get(k, "") for k in keys] for row in history])


def _robustness_config(cfg, **overrides):
    return _build(RobustnessConfig, {**(cfg.robustness or {}), **overrides}, "robustness")


def _run_robustness(run, oracle, samples, rcfg, stage="robustness", own_classes=None):
    sd = rcfg.strategy.value == "SD" and own_classes is not None
    # SD with dataset labels never queries, references included
    refs = group_references(None if sd else oracle, samples, rcfg.reference_per_class, run.config.seed,
                            labels=own_classes if sd else None)
    start = oracle.query_count
    try:
        records = robustness_batch(
            oracle, samples, refs, rcfg, seed=run.config.seed, workers=run.config.workers,
            own_classes=own_classes if sd else None,
            progress=lambda d, t: run.progress(stage, d, t, oracle.query_count - start),
        )
    except PreconditionError:
        if oracle.remaining is not None and oracle.remaining <= 0:
            raise BudgetExhaustedError(f"oracle budget exhausted after {oracle.query_count - start} queries") from None
        raise
    return records


def cmd_robustness(run):
    cfg = run.config
    ds = load_dataset(cfg.dataset)
    oracle = load_oracle(cfg.oracle, cfg.dataset)
    rcfg = _robustness_config(cfg)
    records = _run_robustness(run, oracle, ds.images, rcfg, own_classes=ds.labels)
    L = oracle.class_count
    write_records_csv(run.out / "records.csv", records, L, run.digest)
    write_matrix_csv(run.out / "heatmap.csv", distance_heatmap(records, L), run.digest)
    dist = np.array([r.distances for r in records])
    run.write_json("summary.json", {
        "samples": len(records),
        "queries": int(sum(r.queries_spent for r in records)),
        "mean_distance": float(np.nanmean(dist)) if len(records) else None,
        "strategy": rcfg.strategy.value,
    })


def cmd_labels(run):
    cfg = run.config
    if not cfg.records:
        raise ConfigError("labels needs a 'records' CSV path")
    if not Path(cfg.records).exists():
        raise ConfigError(f"path not found: {cfg.records}")
    records = read_records_csv(cfg.records)
    ds = _records_dataset(cfg.samples) if cfg.samples else load_dataset(cfg.dataset)
    lcfg = _build(LabelConfig, cfg.labels, "labels")
    by_index = {r.sample_index: r for r in records}
    missing = [i for i in range(len(ds)) if i not in by_index]
    if missing:
        raise ConfigError(f"records CSV lacks {len(missing)} of {len(ds)} samples")
    ordered = [by_index[i] for i in range(len(ds))]
    ts = build_transfer_set(ds.images, ordered, lcfg, class_count=len(ordered[0].distances) if ordered else None,
                            sample_shape=ds.shape,
                            metadata={"source": "pseudo" if cfg.samples else "real", "seed": cfg.seed,
                                      "records": str(cfg.records)})
    ts.save(run.out / "transfer")
    run.write_json("summary.json", {"count": len(ts), "temperature": lcfg.temperature})


def cmd_distill(run):
    cfg = run.config
    if cfg.method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {cfg.method!r}")
    base = default_recipe(cfg.method, _training(cfg))
    # explicit training entries win over the per-method defaults
    tcfg = replace(base, **{k: v for k, v in (cfg.training or {}).items()})
    test = load_dataset(cfg.test_dataset, "test") if cfg.test_dataset else None
    eval_data = None if test is None else (test.images, test.labels)
    teacher = _checkpoint(cfg.checkpoint) if cfg.checkpoint else None
    transfer = None
    if cfg.method == "db3kd":
        if not cfg.transfer:
            raise ConfigError("db3kd needs a 'transfer' set path")
        transfer = TransferSet.load(cfg.transfer)
        X, y, L = transfer.samples, transfer.top1, transfer.class_count
    else:
        ds = load_dataset(cfg.dataset)
        X, y = ds.images, ds.labels
        L = teacher.spec.class_count if teacher is not None else int(y.max()) + 1
    scfg = _training(cfg, "surrogate_training") if cfg.surrogate_training else None
    net, history = distill(cfg.method, X, y, cfg.student, tcfg, teacher=teacher, transfer=transfer,
                           surrogate_config=scfg, eval_data=eval_data, seed=cfg.seed, class_count=L)
    net.save(run.out / "student", seed=cfg.seed, epoch=tcfg.epochs)
    _write_history(run, history)
    summary = {"method": cfg.method, "final": history[-1]}
    if test is not None:
        summary["test_accuracy"] = evaluate(net, test.images, test.labels).accuracy
    run.write_json("summary.json", summary)


def _generation_config(cfg, **overrides):
    doc = {**(cfg.generation or {}), **overrides}
    doc.setdefault("seed", cfg.seed)
    return _build(GenerationConfig, doc, "generation")


def _generate(run, oracle, gcfg, stage="generate"):
    start = oracle.query_count
    samples = generate_pseudo_samples(oracle, gcfg, workers=run.config.workers,
                                      progress=lambda d, t: run.progress(stage, d, t, oracle.query_count - start))
    X = np.stack([s.tensor for s in samples]).astype(np.float32) if samples else \
        np.zeros((0,) + oracle.input_shape, dtype=np.float32)
    y = np.array([s.teacher_class for s in samples], dtype=np.int64)
    dropped = 0
    if run.config.augmentation is not None and len(X):
        policy = _build(AugmentationPolicy, run.config.augmentation, "augmentation")
        aug, prov, dropped = augment_and_recover(oracle, X, y, policy, gcfg.robustness)
        X = np.concatenate([X, aug])
        y = np.concatenate([y, y[[p for p, _ in prov]]])
    report = generation_report(samples, oracle.class_count, dropped)
    report["augmented_total"] = int(len(X))
    return X, y, samples, report


def cmd_generate(run):
    cfg = run.config
    oracle = load_oracle(cfg.oracle, cfg.dataset)
    gcfg = _generation_config(cfg)
    X, y, samples, report = _generate(run, oracle, gcfg)
    L = oracle.class_count
    ts = TransferSet(X, np.eye(L, dtype=np.float32)[y], y,
                     {"source": "pseudo", "labelled": False, "seed": cfg.seed, "oracle": oracle.describe(),
                      "params": gcfg.to_dict()})
    ts.save(run.out / "pseudo")
    traces = [[i, s.teacher_class, k, d] for i, s in enumerate(samples) for k, d in enumerate(s.boundary_distance_trace)]
    run.write_csv("traces.csv", ["sample", "class", "iteration", "distance"], traces)
    run.write_json("report.json", report)


def cmd_evaluate(run):
    cfg = run.config
    if not cfg.checkpoint:
        raise ConfigError("evaluate needs a 'checkpoint'")
    net = _checkpoint(cfg.checkpoint)
    ds = load_dataset(cfg.test_dataset or cfg.dataset, "test")
    res = evaluate(net, ds.images, ds.labels)
    L = net.spec.class_count
    run.write_csv("confusion.csv", ["true"] + [str(k) for k in range(L)],
                  [[m] + row.tolist() for m, row in enumerate(res.confusion)])
    run.write_csv("per_class.csv", ["class", "accuracy"],
                  [[k, "" if np.isnan(a) else repr(float(a))] for k, a in enumerate(res.per_class)])
    run.write_json("summary.json", {"accuracy": res.accuracy, "samples": len(ds)})


def whitebox_heatmap(network, images):
    """Per-class mean of ``1 - p_n`` over samples the network assigns to ``m``.

    Min-max scaled over the off-diagonal entries like the robustness heatmap.
    """
    p = softmax(network.activations(images))
    pred = np.argmax(p, axis=1)
    L = p.shape[1]
    mean = np.full((L, L), np.nan)
    for m in range(L):
        sel = pred == m
        if sel.any():
            mean[m] = 1.0 - p[sel].mean(axis=0)
    np.fill_diagonal(mean, np.nan)
    lo, hi = np.nanmin(mean), np.nanmax(mean)
    return (mean - lo) / (hi - lo) if hi > lo else np.where(np.isnan(mean), np.nan, 0.0)


def cmd_whitebox_heatmap(run):
    cfg = run.config
    if not cfg.checkpoint:
        raise ConfigError("whitebox-heatmap needs a 'checkpoint'")
    net = _checkpoint(cfg.checkpoint)
    ds = load_dataset(cfg.dataset)
    write_matrix_csv(run.out / "whitebox_heatmap.csv", whitebox_heatmap(net, ds.images), run.digest)


# ---- sweep ------------------------------------------------------------------

SWEEP_KEYS = ("axis", "values", "mode", "per_class", "evaluate_on")


def _sweep_cell(run, axis, value):
    """One grid cell; returns a result row (dict)."""
    cfg = run.config
    sweep = cfg.sweep
    mode = sweep.get("mode", "db3kd")
    oracle = load_oracle(cfg.oracle, cfg.dataset)
    test = load_dataset(cfg.test_dataset, "test") if cfg.test_dataset else None
    rover = {"query_limit_per_direction": int(value)} if axis == "query_budget" else {}
    rcfg = _robustness_config(cfg, **rover)
    lcfg = _build(LabelConfig, {**(cfg.labels or {}), **({"temperature": float(value)} if axis == "temperature" else {})},
                  "labels")
    start = oracle.query_count
    if mode == "zsdb3kd":
        gover = {}
        if axis == "iterations":
            gover["outer_iterations"] = int(value)
        if axis == "sample_count":
            gover["per_class_quota"] = int(value)
        gcfg = _generation_config(cfg, **gover)
        X, _, _, _ = _generate(run, oracle, gcfg, stage=f"sweep:{axis}={value}:generate")
    elif mode == "db3kd":
        ds = load_dataset(cfg.dataset)
        if axis == "sample_count":
            ds = subset(ds, int(value), cfg.seed)
        X = ds.images
    else:
        raise ConfigError(f"sweep mode must be db3kd or zsdb3kd, got {mode!r}")
    records = _run_robustness(run, oracle, X, rcfg, stage=f"sweep:{axis}={value}:robustness")
    ts = build_transfer_set(X, records, lcfg, class_count=oracle.class_count, sample_shape=oracle.input_shape)
    tcfg = replace(default_recipe("db3kd", _training(cfg)), temperature=lcfg.temperature,
                   **{k: v for k, v in (cfg.training or {}).items() if k != "temperature"})
    net, history = distill("db3kd", ts.samples, ts.top1, cfg.student, tcfg, transfer=ts, seed=cfg.seed,
                           class_count=oracle.class_count)
    dist = np.array([r.distances for r in records])
    row = {
        "axis": axis,
        "value": value,
        "mean_distance": float(np.nanmean(dist)),
        "queries": int(oracle.query_count - start),
        "transfer_size": int(len(ts)),
        "train_accuracy": history[-1]["train_accuracy"],
    }
    if test is not None:
        row["test_accuracy"] = evaluate(net, test.images, test.labels).accuracy
    return row


def cmd_sweep(run):
    cfg = run.config
    sweep = _strict(cfg.sweep, SWEEP_KEYS, "sweep")
    axis = sweep.get("axis")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = sweep.get("values") or []
    if not values:
        raise ConfigError("sweep needs a non-empty 'values' list")
    cells = run.out / "cells"
    cells.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, value in enumerate(values):
        path = cells / f"{axis}={value}.json"
        if path.exists():
            done = json.loads(path.read_text())
            if done.get("config_hash") != run.digest:
                raise ConfigError(f"{path} was produced by a different configuration; remove it or change out_dir")
            rows.append(done["row"])
        else:
            row = _sweep_cell(run, axis, value)
            path.write_text(json.dumps({"config_hash": run.digest, "row": row}, indent=1, sort_keys=True) + "\n")
            rows.append(row)
        run.progress("sweep", k + 1, len(values))
    keys = list(rows[0])
    run.write_csv("sweep.csv", keys, [[r.get(k, "") for k in keys] for r in rows])


HANDLERS = {
    "train-teacher": cmd_train_teacher,
    "robustness": cmd_robustness,
    "labels": cmd_labels,
    "distill": cmd_distill,
    "generate": cmd_generate,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
    "whitebox-heatmap": cmd_whitebox_heatmap,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--workers", type=int, help="worker threads (default: available CPUs)")
    common.add_argument("--out-dir", help="output directory (overrides the config)")
    parser = argparse.ArgumentParser(prog="hardlabel-kd", description="Distillation from a hard-label teacher.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train-teacher": "train a preset network with cross-entropy",
        "robustness": "per-sample boundary distances and the class heatmap",
        "labels": "robustness records to a soft-labelled transfer set",
        "distill": "train a student (db3kd or a baseline)",
        "generate": "zero-shot pseudo samples",
        "sweep": "grid over query budget, iterations, sample count or temperature",
        "evaluate": "accuracy and confusion matrix of a checkpoint",
        "whitebox-heatmap": "1 - softmax probability matrix from a checkpoint",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_config(args):
    doc = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    cfg = RunConfig.from_dict(doc)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if args.workers is not None:
        cfg.workers = args.workers
    elif "workers" not in doc:
        cfg.workers = os.cpu_count() or 1
    return cfg


def main(argv=None, stderr=None):
    stderr = stderr if stderr is not None else sys.stderr
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        run = Run(args.command, cfg, stderr)
        run.start()
        HANDLERS[args.command](run)
    except (ConfigError, FileNotFoundError, FormatError, ValueError) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except BudgetExhaustedError as exc:
        stderr.write(f"budget exhausted: {exc}\n")
        return EXIT_BUDGET
    except NumericalError as exc:
        stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
