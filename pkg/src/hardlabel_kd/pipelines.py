"""Experiment recipes shared by the CLI and the acceptance suite.

Baselines follow the training table: plain cross-entropy, standard KD from a
white-box teacher's logits, KD from a white-box surrogate with the student's
architecture, and KD on randomly drawn robustness ("noise logits").
"""
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .geometry import RobustnessConfig, group_references, robustness_batch
from .labels import LabelConfig, TransferSet, build_transfer_set, noise_records
from .nn import DistillConfig, Network, evaluate, preset, softmax, train_classifier, train_student
from .oracle import NetworkOracle

__all__ = [
    "METHODS",
    "TeacherRecipe",
    "train_teacher",
    "robustness_transfer_set",
    "distill",
    "default_recipe",
]

METHODS = ("student-ce", "standard-kd", "surrogate-kd", "noise-logits", "db3kd")


@dataclass
class TeacherRecipe:
    architecture: str = "lenet-tiny"
    training: DistillConfig = field(default_factory=lambda: DistillConfig(
        epochs=12, learning_rate=3e-3, batch_size=64, schedule="cosine"))


def train_teacher(train, recipe=None, seed=0, eval_data=None, callback=None):
    """Cross-entropy teacher on a ``Dataset``; returns ``(network, history)``."""
    recipe = recipe or TeacherRecipe()
    L = int(train.labels.max()) + 1
    net = Network(preset(recipe.architecture, train.shape, L), seed=seed)
    cfg = replace(recipe.training, seed=seed)
    result = train_classifier(net, train.images, train.labels, cfg, eval_data=eval_data, callback=callback)
    return result.network, result.history


def default_recipe(method, base=None):
    """Per-method KD hyperparameters (temperature, balance, learning rate)."""
    base = base or DistillConfig()
    if method == "student-ce":
        return replace(base, balance=0.0)
    if method == "standard-kd":
        return replace(base, temperature=20.0, balance=1.0)
    if method == "surrogate-kd":
        return replace(base, temperature=3.0, balance=0.7)
    if method in ("noise-logits", "db3kd"):
        return replace(base, temperature=0.3, balance=1.0)
    raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")


def robustness_transfer_set(oracle, samples, config=None, label_config=None, *, references=None, seed=0,
                            workers=1, progress=None):
    """Query-based soft labels for ``samples`` (references drawn from them)."""
    config = config or RobustnessConfig()
    label_config = label_config or LabelConfig()
    if references is None:
        references = group_references(oracle, samples, config.reference_per_class, seed)
    records = robustness_batch(oracle, samples, references, config, seed=seed, workers=workers, progress=progress)
    meta = {"source": "real", "strategy": config.strategy.value, "seed": seed, "oracle": oracle.describe(),
            "params": config.to_dict()}
    ts = build_transfer_set(samples, records, label_config, class_count=oracle.class_count,
                            sample_shape=oracle.input_shape, metadata=meta)
    return ts, records


def _logit_transfer_set(network, X, temperature):
    probs = softmax(network.activations(X), temperature)
    return TransferSet(X, probs, np.argmax(probs, axis=1), {"source": "real", "temperature": temperature})


def distill(method, X, y, student_arch, config=None, *, teacher=None, transfer=None, surrogate_config=None,
            eval_data=None, seed=0, class_count=None, noise_range=None):
    """Train a student by one of ``METHODS``; returns ``(network, history)``.

    * ``student-ce`` uses the ground-truth ``y`` only.
    * ``standard-kd`` needs the white-box ``teacher`` network.
    * ``surrogate-kd`` first fits a CE surrogate of the student architecture.
    * ``noise-logits`` draws random robustness around the teacher's labels
      (``y`` when no teacher is given), uniform over ``noise_range``.
    * ``db3kd`` trains on a ready ``transfer`` set with its top-1 as hard label.
    """
    config = default_recipe(method, config) if config is None else config
    config = replace(config, seed=seed)
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    L = class_count or (teacher.spec.class_count if teacher is not None else int(y.max()) + 1)
    student = Network(preset(student_arch, X.shape[1:], L), seed=seed)
    if method == "student-ce":
        result = train_classifier(student, X, y, config, eval_data=eval_data)
    elif method == "standard-kd":
        if teacher is None:
            raise ConfigError("standard-kd needs a white-box teacher network")
        ts = _logit_transfer_set(teacher, X, config.temperature)
        result = train_student(student, ts, config, hard_labels=y, eval_data=eval_data)
    elif method == "surrogate-kd":
        scfg = replace(surrogate_config or default_recipe("student-ce", config), seed=seed + 1000)
        surrogate = Network(preset(student_arch, X.shape[1:], L), seed=seed + 1000)
        train_classifier(surrogate, X, y, scfg)
        ts = _logit_transfer_set(surrogate, X, config.temperature)
        result = train_student(student, ts, config, hard_labels=y, eval_data=eval_data)
    elif method == "noise-logits":
        own = y if teacher is None else teacher.predict(X)
        low, high = noise_range or (0.5, 5.0)
        records = noise_records(own, L, seed=seed, low=low, high=high)
        ts = build_transfer_set(X, records, LabelConfig(config.temperature), class_count=L)
        result = train_student(student, ts, config, eval_data=eval_data)
    elif method == "db3kd":
        if transfer is None:
            raise ConfigError("db3kd needs a transfer set built from robustness records")
        result = train_student(student, transfer, config, eval_data=eval_data)
    else:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    return result.network, result.history


def teacher_oracle(network, budget=None):
    return NetworkOracle(network, budget)
