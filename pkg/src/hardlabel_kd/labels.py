"""Robustness records -> activations -> temperature-softened soft labels."""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import storage
from .errors import FormatError, PreconditionError

__all__ = [
    "LabelConfig",
    "SoftLabel",
    "TransferSet",
    "construct_activations",
    "soften",
    "build_transfer_set",
    "noise_records",
]


@dataclass
class LabelConfig:
    temperature: float = 0.3
    clamp_floor: float = 1e-8
    # soften the constructed teacher distribution with the same temperature
    # as the student side; False uses softmax(a) directly
    soften_teacher: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not self.clamp_floor > 0:
            raise ValueError("clamp_floor must be positive")


@dataclass
class SoftLabel:
    probabilities: np.ndarray
    top1: int


def construct_activations(record):
    """Pre-softmax activations from a robustness record.

    Off-class entries are ``1/r_n`` and the own-class entry is ``sum 1/r_i``;
    every entry is then divided by ``(sum 1/r_i)^2``, which makes the own-class
    activation ``1 / sum 1/r_i``.
    """
    dist = np.asarray(getattr(record, "distances", record), dtype=np.float64)
    m = int(record.own_class) if hasattr(record, "own_class") else int(np.flatnonzero(np.isnan(dist))[0])
    off = np.arange(len(dist)) != m
    r = dist[off]
    if np.any(~(r > 0)):
        raise PreconditionError("robustness distances must be positive and finite")
    inv = 1.0 / r
    total = inv.sum()
    a = np.empty(len(dist))
    a[off] = inv / total**2
    a[m] = 1.0 / total
    return a


def soften(activations, temperature=1.0):
    """``softmax(a / temperature)`` with max subtraction."""
    z = np.asarray(activations, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    if p.ndim == 1:
        return SoftLabel(p, int(np.argmax(p)))
    return p


def soft_label(record, config=None):
    config = config or LabelConfig()
    a = construct_activations(record)
    label = soften(a, config.temperature if config.soften_teacher else 1.0)
    # the own class is the activation argmax, strictly so for L >= 3; with two
    # classes both activations equal r and only the record says which is m
    label.top1 = int(record.own_class)
    return label


@dataclass
class TransferSet:
    """Samples with soft labels; arrays are float32 so persistence is exact."""

    samples: np.ndarray
    probabilities: np.ndarray
    top1: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        self.probabilities = np.asarray(self.probabilities, dtype=np.float32)
        self.top1 = np.asarray(self.top1, dtype=np.int64)
        if not (len(self.samples) == len(self.probabilities) == len(self.top1)):
            raise PreconditionError("samples, probabilities and top1 must align")

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        for x, p, t in zip(self.samples, self.probabilities, self.top1):
            yield x, SoftLabel(p, int(t))

    @property
    def class_count(self):
        return self.probabilities.shape[1]

    def save(self, stem):
        return storage.write_records(
            stem, self.samples, self.probabilities, self.metadata, extra={"top1": self.top1.tolist()}
        )

    @classmethod
    def load(cls, stem):
        samples, probs, manifest = storage.read_records(stem)
        top1 = manifest.get("top1")
        if top1 is None:
            top1 = np.argmax(probs, axis=1) if len(probs) else []
        if len(top1) != len(samples):
            raise FormatError("manifest top1 list does not match the record count")
        return cls(samples, probs, np.asarray(top1, dtype=np.int64), manifest["metadata"])


def build_transfer_set(samples, records, config=None, *, class_count=None, sample_shape=None, metadata=None):
    """Align samples with soft labels built from their robustness records.

    An empty set needs ``class_count`` and ``sample_shape`` to stay well-formed.
    """
    config = config or LabelConfig()
    samples = np.asarray(samples, dtype=np.float32)
    if len(samples) != len(records):
        raise PreconditionError(f"{len(samples)} samples but {len(records)} records")
    if len(records):
        L = records[0].class_count
    elif class_count is not None:
        L = class_count
    else:
        raise PreconditionError("class_count is required for an empty transfer set")
    probs = np.zeros((len(records), L), dtype=np.float64)
    top1 = np.zeros(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        lab = soft_label(rec, config)
        probs[i] = lab.probabilities
        top1[i] = lab.top1
    meta = {
        "source": "real",
        "strategy": None,
        "temperature": config.temperature,
        "soften_teacher": config.soften_teacher,
        "seed": None,
        "oracle": None,
        "params": {},
    }
    meta.update(metadata or {})
    if len(samples) == 0:
        if sample_shape is None and samples.ndim < 2:
            raise PreconditionError("sample_shape is required for an empty transfer set")
        samples = samples.reshape((0,) + tuple(sample_shape or samples.shape[1:]))
    return TransferSet(samples, probs, top1, meta)


def noise_records(own_classes, class_count, seed=0, low=0.5, high=5.0):
    """Records with uniformly random robustness, the noise-logits baseline."""
    from .geometry import RobustnessRecord

    rng = np.random.default_rng(seed)
    out = []
    for i, m in enumerate(own_classes):
        d = rng.uniform(low, high, size=class_count)
        d[m] = np.nan
        out.append(RobustnessRecord(i, int(m), d, 0))
    return out
