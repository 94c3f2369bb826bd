"""Datasets: IDX ingestion, synthetic tasks with matching analytic teachers, caching."""
import gzip
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import storage
from .errors import ConfigError, FormatError, PreconditionError, ShapeMismatchError
from .oracle import CentroidTeacher, LinearTeacher

__all__ = [
    "Dataset",
    "SyntheticSpec",
    "load_idx",
    "write_idx",
    "load_mnist",
    "generate_synthetic",
    "subset",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ShapeMismatchError(f"images must be (N, C, W, H), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ShapeMismatchError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise FormatError("pixel values must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return self.images.shape[1:]

    def class_counts(self, class_count=None):
        return np.bincount(self.labels, minlength=class_count or 0)

    def save(self, stem):
        return storage.write_records(stem, self.images, self.labels[:, None].astype(np.float32),
                                     metadata={"kind": "dataset"}, extra={"split": self.split})

    @classmethod
    def load(cls, stem):
        images, labels, manifest = storage.read_records(stem)
        if manifest["L"] != 1:
            raise FormatError("dataset records carry exactly one label column")
        return cls(images, labels[:, 0].astype(np.int64), manifest.get("split", "train"))


def _read_bytes(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    raw = path.read_bytes()
    if raw[:2] == GZIP_MAGIC:
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, magic, path):
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    payload = len(raw) - header
    if payload < size:
        raise FormatError(f"{path}: truncated payload ({payload} of {size} bytes)")
    if payload > size:
        raise FormatError(f"{path}: {payload - size} trailing bytes after the payload")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, split="train"):
    """Read an IDX image/label pair (optionally gzipped) into a ``Dataset``."""
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, labels_path)
    if len(images) != len(labels):
        raise FormatError(f"{images_path} holds {len(images)} images but {labels_path} holds {len(labels)} labels")
    pixels = images.astype(np.float32)[:, None] / np.float32(255.0)
    return Dataset(pixels, labels.astype(np.int64), split)


def write_idx(path, array, compress=None):
    """Write a uint8 array as IDX; ``compress`` defaults to a ``.gz`` suffix check."""
    array = np.asarray(array, dtype=np.uint8)
    magic = LABEL_MAGIC if array.ndim == 1 else IMAGE_MAGIC
    if array.ndim not in (1, 3):
        raise ShapeMismatchError("IDX arrays are (N,) labels or (N, rows, cols) images")
    raw = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    path = Path(path)
    if compress is None:
        compress = path.suffix == ".gz"
    if compress:
        raw = gzip.compress(raw, mtime=0)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(raw)
    return path


def load_mnist(root, split="train"):
    """Load ``{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`` from ``root``."""
    root = Path(root)
    prefix = "train" if split == "train" else "t10k"
    paths = []
    for kind in ("images-idx3", "labels-idx1"):
        stem = root / f"{prefix}-{kind}-ubyte"
        gz = stem.with_name(stem.name + ".gz")
        paths.append(gz if gz.exists() else stem)
    return load_idx(*paths, split=split)


@dataclass
class SyntheticSpec:
    kind: str = "gaussian_blobs"
    dimensions: int = 2
    class_count: int = 3
    per_class: int = 100
    dispersion: float = 0.05
    seed: int = 0
    centers: list = None
    max_attempts: int = 100_000
    # 0 draws samples right after the teacher; k > 0 uses an independent
    # stream with the same teacher (held-out splits)
    sample_stream: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian_blobs", "linear_regions"):
            raise ConfigError(f"unknown synthetic kind {self.kind!r}")
        if self.class_count < 2:
            raise ConfigError("a synthetic task needs at least two classes")
        if self.dimensions < 1 or self.per_class < 0:
            raise ConfigError("dimensions must be >= 1 and per_class >= 0")
        if self.dispersion < 0:
            raise ConfigError("dispersion must be non-negative")

    def to_dict(self):
        return asdict(self)


def _sample_rng(spec, rng):
    return rng if spec.sample_stream == 0 else np.random.default_rng([spec.seed, spec.sample_stream])


def _blobs(spec, rng):
    D, L = spec.dimensions, spec.class_count
    if spec.centers is not None:
        centers = np.asarray(spec.centers, dtype=np.float64).reshape(L, D)
    else:
        centers = rng.uniform(0.2, 0.8, size=(L, D))
    teacher = CentroidTeacher(centers)
    rng = _sample_rng(spec, rng)
    x = centers[:, None, :] + spec.dispersion * rng.standard_normal((L, spec.per_class, D))
    x = np.clip(x, 0.0, 1.0).reshape(-1, D)
    y = np.repeat(np.arange(L), spec.per_class)
    return x, y, teacher


def _linear_regions(spec, rng):
    D, L = spec.dimensions, spec.class_count
    # unit normals anchored at the cube centre: every class owns a cone there
    w = rng.standard_normal((L, D))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    b = -w @ np.full(D, 0.5)
    teacher = LinearTeacher(w, b)
    rng = _sample_rng(spec, rng)
    xs = [[] for _ in range(L)]
    drawn = 0
    batch = max(256, 4 * L * spec.per_class)
    while any(len(v) < spec.per_class for v in xs):
        if drawn >= spec.max_attempts:
            short = [k for k in range(L) if len(xs[k]) < spec.per_class]
            raise PreconditionError(f"classes {short} unreachable after {drawn} rejection draws")
        cand = rng.uniform(0.0, 1.0, size=(batch, D))
        drawn += batch
        lab = np.argmax(cand @ w.T + b, axis=1)
        for k in range(L):
            need = spec.per_class - len(xs[k])
            if need > 0:
                xs[k].extend(cand[lab == k][:need])
    x = np.concatenate([np.asarray(v).reshape(-1, D) for v in xs])
    y = np.repeat(np.arange(L), spec.per_class)
    return x, y, teacher


def generate_synthetic(spec):
    """Return ``(Dataset, teacher)``; samples have shape ``(1, 1, D)``."""
    rng = np.random.default_rng(spec.seed)
    make = _blobs if spec.kind == "gaussian_blobs" else _linear_regions
    x, y, teacher = make(spec, rng)
    order = rng.permutation(len(y))
    images = x[order].reshape(-1, 1, 1, spec.dimensions).astype(np.float32)
    return Dataset(images, y[order], f"synthetic-{spec.kind}"), teacher


def subset(dataset, per_class, seed=0, class_count=None):
    """Stratified ``per_class`` draw per class; kept in the original order."""
    counts = dataset.class_counts(class_count)
    if per_class < 0:
        raise PreconditionError("per_class must be non-negative")
    short = [k for k, c in enumerate(counts) if c < per_class]
    if short:
        raise PreconditionError(f"classes {short} have fewer than {per_class} samples")
    rng = np.random.default_rng(seed)
    keep = []
    for k in range(len(counts)):
        idx = np.flatnonzero(dataset.labels == k)
        keep.append(rng.choice(idx, size=per_class, replace=False))
    keep = np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)
    return Dataset(dataset.images[keep], dataset.labels[keep], dataset.split)
