import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import NumericalError, PreconditionError, ShapeMismatchError
from .losses import kd_loss
from .optim import make_optimizer

__all__ = ["DistillConfig", "TrainResult", "EvalResult", "train_student", "train_classifier", "evaluate"]


@dataclass
class DistillConfig:
    temperature: float = 0.3
    balance: float = 1.0
    optimizer: str = "adam"
    learning_rate: float = 5e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    divergence: str = "kl"
    scale_by_t2: bool = True
    schedule: str = "constant"

    def __post_init__(self):
        if self.balance < 0:
            raise ValueError("balance must be >= 0")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def learning_rate_at(self, epoch):
        if self.schedule == "cosine":
            return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / self.epochs))
        return self.learning_rate


@dataclass
class TrainResult:
    network: object
    history: list = field(default_factory=list)


@dataclass
class EvalResult:
    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray


def train_student(student, transfer, config=None, *, hard_labels=None, eval_data=None, callback=None):
    """Fit ``student`` in place on a transfer set with the KD objective.

    The hard label of every entry defaults to the transfer set's top-1 class.
    ``eval_data`` is an optional ``(X, y)`` pair scored after each epoch.
    """
    config = config or DistillConfig()
    X = np.asarray(transfer.samples)
    soft = np.asarray(transfer.probabilities, dtype=np.float64)
    y = np.asarray(transfer.top1 if hard_labels is None else hard_labels, dtype=np.int64)
    if len(X) == 0:
        raise PreconditionError("cannot train on an empty transfer set")
    if X.shape[1:] != student.spec.input_shape:
        raise ShapeMismatchError(f"transfer samples {X.shape[1:]} do not fit the student input {student.spec.input_shape}")
    opt = make_optimizer(config.optimizer, config.learning_rate, momentum=config.momentum,
                         weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    history = []
    student.train()
    for epoch in range(config.epochs):
        opt.lr = config.learning_rate_at(epoch)
        order = rng.permutation(len(X))
        total, correct = 0.0, 0
        for start in range(0, len(X), config.batch_size):
            idx = order[start : start + config.batch_size]
            acts = student.forward(X[idx], train=True)
            loss, grad = kd_loss(acts, soft[idx], y[idx], config.temperature, config.balance,
                                 config.divergence, config.scale_by_t2)
            if not np.isfinite(loss):
                student.eval()
                raise NumericalError(f"loss diverged at epoch {epoch}", epoch=epoch)
            student.backward(grad)
            opt.step(student.parameters, student.gradients)
            total += loss * len(idx)
            correct += int(np.sum(np.argmax(acts, axis=1) == y[idx]))
        if not np.all(np.isfinite(student.parameters)):
            student.eval()
            raise NumericalError(f"non-finite parameters after epoch {epoch}", epoch=epoch)
        row = {"epoch": epoch, "loss": total / len(X), "train_accuracy": correct / len(X)}
        if eval_data is not None:
            student.eval()
            row["test_accuracy"] = evaluate(student, *eval_data).accuracy
            student.train()
        history.append(row)
        if callback is not None:
            callback(row)
    student.eval()
    return TrainResult(student, history)


def train_classifier(network, X, y, config=None, **kwargs):
    """Plain cross-entropy training (the KD term switched off)."""
    from ..labels import TransferSet

    config = config or DistillConfig()
    y = np.asarray(y, dtype=np.int64)
    L = network.spec.class_count
    onehot = np.eye(L, dtype=np.float32)[y]
    cfg = DistillConfig(**{**asdict(config), "balance": 0.0})
    return train_student(network, TransferSet(X, onehot, y), cfg, **kwargs)


def evaluate(network, X, y, batch_size=1024):
    X = np.asarray(X)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise PreconditionError("cannot evaluate on an empty dataset")
    if len(X) != len(y):
        raise ShapeMismatchError("images and labels differ in length")
    pred = network.predict(X, batch_size)
    L = network.spec.class_count
    confusion = np.zeros((L, L), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.diag(confusion) / support
    return EvalResult(float(np.mean(pred == y)), per_class, confusion)
