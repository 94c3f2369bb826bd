"""Manifest + little-endian float32 blob, shared by transfer sets and datasets.

A record is ``C*W*H`` pixel floats followed by ``L`` label floats.  The pair
of files is ``<stem>.json`` (manifest) and ``<stem>.bin`` (records).
"""
import json
from pathlib import Path

import numpy as np

from .errors import FormatError

DTYPE = np.dtype("<f4")


def _paths(stem):
    stem = Path(stem)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def write_records(stem, samples, labels, metadata=None, extra=None):
    """Write ``samples`` (N, C, W, H) and ``labels`` (N, L) as one record pair."""
    samples = np.asarray(samples)
    labels = np.asarray(labels)
    if samples.ndim != 4:
        raise FormatError("samples must be (N, C, W, H)")
    n = len(samples)
    if labels.shape[0] != n:
        raise FormatError("samples and labels disagree on the record count")
    L = labels.shape[1] if labels.ndim == 2 else 0
    blob = np.concatenate(
        [samples.reshape(n, int(np.prod(samples.shape[1:]))).astype(DTYPE), labels.reshape(n, L).astype(DTYPE)], axis=1
    )
    manifest = {
        "shape": list(samples.shape[1:]),
        "L": int(L),
        "count": int(n),
        "metadata": metadata or {},
        "dtype": "f32-le",
    }
    if extra:
        manifest.update(extra)
    json_path, bin_path = _paths(stem)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(np.ascontiguousarray(blob, dtype=DTYPE).tobytes())
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return json_path, bin_path


def read_records(stem):
    """Inverse of :func:`write_records`; returns ``(samples, labels, manifest)``."""
    json_path, bin_path = _paths(stem)
    manifest = json.loads(json_path.read_text())
    if manifest.get("dtype") != "f32-le":
        raise FormatError(f"unsupported dtype {manifest.get('dtype')!r}")
    shape = tuple(manifest["shape"])
    L = int(manifest["L"])
    n = int(manifest["count"])
    width = int(np.prod(shape)) + L
    raw = bin_path.read_bytes()
    if len(raw) != n * width * DTYPE.itemsize:
        raise FormatError(f"{bin_path} holds {len(raw)} bytes, expected {n * width * DTYPE.itemsize}")
    blob = np.frombuffer(raw, dtype=DTYPE).reshape(n, width)
    samples = blob[:, : width - L].reshape((n,) + shape).astype(np.float32)
    labels = blob[:, width - L :].astype(np.float32)
    return samples, labels, manifest
