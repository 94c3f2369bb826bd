"""Sample robustness against each class, measured through a hard-label oracle.

Three strategies are offered:

* ``SD``  -- nearest reference sample of the other class, no queries.
* ``BD``  -- bisection along the segment towards each reference until the
  label flips.
* ``MBD`` -- start from the BD point and slide along the decision boundary
  using sign-of-label zeroth-order gradient estimates.
"""
import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import BudgetExhaustedError, EstimationError, PreconditionError, ShapeMismatchError

__all__ = [
    "Strategy",
    "Mode",
    "RobustnessConfig",
    "RobustnessRecord",
    "BoundaryPoint",
    "sample_distance",
    "binary_search_boundary",
    "estimate_boundary_gradient",
    "minimize_boundary_distance",
    "robustness_vector",
    "robustness_batch",
    "group_references",
    "distance_heatmap",
    "write_records_csv",
    "read_records_csv",
    "write_matrix_csv",
]

DISTANCE_FLOOR = 1e-8


class Strategy(str, Enum):
    SD = "SD"
    BD = "BD"
    MBD = "MBD"


@dataclass(frozen=True)
class Mode:
    """Far-side condition of a boundary search.

    ``targeted`` holds where the label equals ``cls``; untargeted holds where
    it differs from ``cls``.
    """

    targeted: bool
    cls: int

    @classmethod
    def toward(cls, n):
        return cls(True, int(n))

    @classmethod
    def away_from(cls, m):
        return cls(False, int(m))

    def holds(self, label):
        return (label == self.cls) if self.targeted else (label != self.cls)

    def holds_batch(self, labels):
        labels = np.asarray(labels)
        return labels == self.cls if self.targeted else labels != self.cls


@dataclass
class RobustnessConfig:
    strategy: Strategy = Strategy.MBD
    reference_per_class: int = 1
    epsilon: float = 1e-5
    gradient_samples: int = 200
    probe_radius: float = 1e-2
    descent_step: float = 0.2
    query_limit_per_direction: int = 5000
    improvement_tolerance: float = 1e-4
    patience: int = 3
    max_halvings: int = 5

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        if self.reference_per_class < 1:
            raise ValueError("reference_per_class must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.gradient_samples < 1:
            raise ValueError("gradient_samples must be >= 1")
        if not self.descent_step > 0:
            raise ValueError("descent_step must be positive")
        if self.query_limit_per_direction < 1:
            raise ValueError("query_limit_per_direction must be >= 1")
        if not self.probe_radius > 0 or not self.improvement_tolerance > 0:
            raise ValueError("probe_radius and improvement_tolerance must be positive")

    def to_dict(self):
        d = asdict(self)
        d["strategy"] = self.strategy.value
        return d


@dataclass
class BoundaryPoint:
    point: np.ndarray
    inside_class: int
    distance: float
    # the number of queries this point cost to locate (bookkeeping only)
    queries: int = 0


@dataclass
class RobustnessRecord:
    sample_index: int
    own_class: int
    distances: np.ndarray
    queries_spent: int = 0

    @property
    def class_count(self):
        return len(self.distances)


class _Meter:
    """Per-direction query allowance in front of a shared oracle."""

    def __init__(self, oracle, limit=None):
        self.oracle = oracle
        self.limit = limit
        self.spent = 0

    @property
    def remaining(self):
        return math.inf if self.limit is None else self.limit - self.spent

    def _take(self, n):
        if n > self.remaining:
            raise BudgetExhaustedError(f"per-direction query limit {self.limit} reached")
        self.spent += n

    def classify(self, x):
        self._take(1)
        return self.oracle.classify(x)

    def classify_batch(self, xs):
        self._take(len(xs))
        return self.oracle.classify_batch(xs)


def _meter(oracle, limit=None):
    return oracle if isinstance(oracle, _Meter) else _Meter(oracle, limit)


def sample_distance(x0, references, own_class):
    """Distance to the nearest reference of every other class.

    ``references`` maps class index to an array of samples (or is a sequence
    indexed by class).  Returns an ``L``-vector with NaN at ``own_class``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    L = len(references)
    out = np.full(L, np.nan)
    for n in range(L):
        if n == own_class:
            continue
        refs = np.asarray(references[n], dtype=np.float64)
        if refs.size == 0:
            raise PreconditionError(f"no reference samples for class {n}")
        diffs = refs.reshape(len(refs), -1) - x0.ravel()
        out[n] = float(np.min(np.linalg.norm(diffs, axis=1)))
    return out


def _bisect(meter, x0, direction, hi, mode, eps, far_label):
    """Shrink ``[0, hi]`` along ``direction`` until narrower than ``eps``.

    ``alpha = 0`` is known to fail ``mode`` and ``alpha = hi`` to satisfy it.
    """
    lo = 0.0
    spent = 0
    while hi - lo >= eps:
        mid = 0.5 * (lo + hi)
        label = meter.classify(x0 + mid * direction)
        spent += 1
        if mode.holds(label):
            hi, far_label = mid, label
        else:
            lo = mid
    return BoundaryPoint(x0 + hi * direction, int(far_label), float(hi), spent)


def binary_search_boundary(oracle, x0, probe, mode, epsilon=1e-5, *, checked=False, probe_label=None):
    """Locate the boundary crossing on the segment ``[x0, probe]``.

    With ``checked=False`` both endpoints are queried to validate the bracket
    (the near end must fail ``mode``, the far end satisfy it).
    """
    meter = _meter(oracle)
    x0 = np.asarray(x0, dtype=np.float64)
    probe = np.asarray(probe, dtype=np.float64)
    if x0.shape != probe.shape:
        raise ShapeMismatchError("x0 and probe must share a shape")
    extra = 0
    if not checked:
        near = meter.classify(x0)
        probe_label = meter.classify(probe)
        extra = 2
        if mode.holds(near) or not mode.holds(probe_label):
            raise PreconditionError(
                f"segment does not cross the boundary (near label {near}, far label {probe_label}, {mode})"
            )
    span = probe - x0
    length = float(np.linalg.norm(span))
    if length == 0.0:
        raise PreconditionError("probe coincides with x0")
    bp = _bisect(meter, x0, span / length, length, mode, epsilon, probe_label)
    bp.queries += extra
    return bp


def estimate_boundary_gradient(oracle, boundary_point, gradient_samples=200, probe_radius=1e-2, mode=None, rng=None):
    """Unit boundary-normal estimate from signed Gaussian probes.

    Each raw Gaussian direction ``u`` is weighted by +1 when the probe
    ``point + radius * u`` satisfies ``mode`` and by -1 otherwise; the mean is
    normalised at the end.  A degenerate zero mean is retried once.
    """
    meter = _meter(oracle)
    rng = np.random.default_rng(rng)
    point = np.asarray(getattr(boundary_point, "point", boundary_point), dtype=np.float64)
    if mode is None:
        mode = Mode.toward(boundary_point.inside_class)
    for _ in range(2):
        u = rng.standard_normal((gradient_samples,) + point.shape)
        labels = meter.classify_batch(point + probe_radius * u)
        signs = np.where(mode.holds_batch(labels), 1.0, -1.0)
        g = np.tensordot(signs, u, axes=1) / gradient_samples
        norm = float(np.linalg.norm(g))
        if norm > 0.0 and np.isfinite(norm):
            return g / norm
    raise EstimationError("gradient estimate vanished twice")


def minimize_boundary_distance(oracle, x0, initial, config=None, mode=None, rng=None, query_limit=None, history=None):
    """Slide a boundary point along the boundary towards ``x0``.

    Each iteration estimates the boundary normal, steps ``descent_step`` to the
    far side (halving up to ``max_halvings`` times if the step does not land
    there) and re-brackets along the ray from ``x0``.  The running best point
    is returned, so the result is never farther than ``initial``.

    Stops after ``patience`` consecutive iterations without an improvement of
    at least ``improvement_tolerance`` or when the query allowance is spent.
    ``history``, if a list, receives ``(queries, best_distance)`` pairs.
    """
    config = config or RobustnessConfig()
    limit = config.query_limit_per_direction if query_limit is None else query_limit
    meter = oracle if isinstance(oracle, _Meter) else _Meter(oracle, limit)
    rng = np.random.default_rng(rng)
    mode = mode or Mode.toward(initial.inside_class)
    x0 = np.asarray(x0, dtype=np.float64)
    best = initial
    stalls = 0
    Q = config.gradient_samples
    try:
        while stalls < config.patience and meter.remaining >= Q + 1:
            g = estimate_boundary_gradient(meter, best, Q, config.probe_radius, mode, rng)
            step = config.descent_step
            stepped = None
            for _ in range(config.max_halvings + 1):
                candidate = best.point + step * g
                label = meter.classify(candidate)
                if mode.holds(label):
                    stepped = (candidate, label)
                    break
                step *= 0.5
            if stepped is None:
                stalls += 1
                continue
            span = stepped[0] - x0
            length = float(np.linalg.norm(span))
            new = _bisect(meter, x0, span / length, length, mode, config.epsilon, stepped[1])
            if new.distance < best.distance - config.improvement_tolerance:
                stalls = 0
            else:
                stalls += 1
            if new.distance < best.distance:
                best = new
            if history is not None:
                history.append((meter.spent, best.distance))
    except BudgetExhaustedError:
        pass
    except EstimationError:
        pass
    return BoundaryPoint(best.point, best.inside_class, best.distance, meter.spent)


def _direction_rng(seed, sample_index, cls, ref_index):
    return np.random.default_rng([int(seed), int(sample_index), int(cls), int(ref_index)])


def robustness_vector(oracle, x0, references, config=None, *, own_class=None, sample_index=0, seed=0):
    """Robustness record of ``x0`` against every other class.

    For BD/MBD the own class is the oracle's label of ``x0`` (the dataset label
    is ignored); for SD, which never queries, ``own_class`` must be given.
    ``references[n]`` holds candidate samples the teacher labels ``n``; ones
    that fail this check are skipped.
    """
    config = config or RobustnessConfig()
    x0 = np.asarray(x0, dtype=np.float64)
    L = len(references)
    if config.strategy is Strategy.SD:
        if own_class is None:
            if oracle is None:
                raise PreconditionError("SD without an oracle needs own_class")
            own_class = oracle.classify(x0)
            # the own-class lookup is bookkeeping, not part of SD itself
        dist = sample_distance(x0, references, own_class)
        dist[~np.isnan(dist)] = np.maximum(dist[~np.isnan(dist)], DISTANCE_FLOOR)
        return RobustnessRecord(sample_index, int(own_class), dist, 0)

    if x0.shape != oracle.input_shape:
        raise ShapeMismatchError(f"expected a sample of shape {oracle.input_shape}, got {x0.shape}")
    m = oracle.classify(x0)
    # the own-label query is billed to the first direction so the total stays
    # within (L - 1) * S * query_limit_per_direction
    spent, carry = 0, 1
    distances = np.full(L, np.nan)
    for n in range(L):
        if n == m:
            continue
        refs = np.asarray(references[n], dtype=np.float64)
        if refs.size == 0:
            raise PreconditionError(f"no reference samples for class {n}")
        best = np.inf
        for i, ref in enumerate(refs):
            meter = _Meter(oracle, config.query_limit_per_direction)
            meter.spent, carry = carry, 0
            try:
                label = meter.classify(ref)
                if label != n:
                    spent += meter.spent
                    continue
                bp = binary_search_boundary(meter, x0, ref, Mode.toward(n), config.epsilon,
                                            checked=True, probe_label=label)
                if config.strategy is Strategy.MBD:
                    bp = minimize_boundary_distance(
                        meter, x0, bp, config, Mode.toward(n), _direction_rng(seed, sample_index, n, i)
                    )
            except BudgetExhaustedError:
                spent += meter.spent
                continue
            spent += meter.spent
            best = min(best, bp.distance)
        if not np.isfinite(best):
            raise PreconditionError(f"no reference of class {n} is labelled {n} by the oracle")
        distances[n] = max(best, DISTANCE_FLOOR)
    return RobustnessRecord(sample_index, int(m), distances, spent)


def group_references(oracle, samples, per_class, seed=0, labels=None):
    """Pick up to ``per_class`` reference samples for each class.

    With an oracle, samples are grouped by the oracle's labels (one query
    each); otherwise by ``labels``.  Selection is a seeded permutation.
    """
    samples = np.asarray(samples)
    if oracle is not None:
        labels = oracle.classify_batch(samples)
        L = oracle.class_count
    else:
        labels = np.asarray(labels)
        L = int(labels.max()) + 1
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    refs = []
    for n in range(L):
        idx = order[labels[order] == n][:per_class]
        refs.append(samples[np.sort(idx)])
    return refs


def robustness_batch(oracle, samples, references, config=None, *, seed=0, workers=None, own_classes=None, indices=None,
                     progress=None):
    """``robustness_vector`` over many samples; identical for any worker count."""
    config = config or RobustnessConfig()
    samples = np.asarray(samples)
    indices = range(len(samples)) if indices is None else indices
    indices = list(indices)

    def job(k):
        own = None if own_classes is None else int(own_classes[k])
        return robustness_vector(oracle, samples[k], references, config, own_class=own,
                                 sample_index=indices[k], seed=seed)

    if workers is None or workers <= 1:
        out = []
        for k in range(len(samples)):
            out.append(job(k))
            if progress is not None:
                progress(k + 1, len(samples))
        return out
    with ThreadPoolExecutor(max_workers=workers) as pool:
        out = []
        for k, rec in enumerate(pool.map(job, range(len(samples)))):
            out.append(rec)
            if progress is not None:
                progress(k + 1, len(samples))
        return out


def distance_heatmap(records, class_count=None):
    """``L x L`` matrix of per-class mean distances, min-max scaled to [0, 1].

    Row ``m`` averages the records whose own class is ``m``; the diagonal is
    NaN.  Rows without records are NaN.
    """
    L = class_count or records[0].class_count
    total = np.zeros((L, L))
    count = np.zeros(L)
    for rec in records:
        total[rec.own_class] += np.nan_to_num(rec.distances)
        count[rec.own_class] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = total / count[:, None]
    np.fill_diagonal(mean, np.nan)
    lo, hi = np.nanmin(mean), np.nanmax(mean)
    return (mean - lo) / (hi - lo) if hi > lo else np.where(np.isnan(mean), np.nan, 0.0)


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_records_csv(path, records, class_count=None, config_digest=None):
    L = class_count or records[0].class_count
    buf = io.StringIO()
    if config_digest:
        buf.write(f"# config_hash={config_digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_index", "own_class", "queries"] + [f"dist_{n}" for n in range(L)])
    for rec in records:
        w.writerow([rec.sample_index, rec.own_class, rec.queries_spent]
                   + ["" if n == rec.own_class else repr(float(rec.distances[n])) for n in range(L)])
    Path(path).write_text(buf.getvalue())


def read_records_csv(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    L = sum(1 for h in header if h.startswith("dist_"))
    records = []
    for row in reader:
        dist = np.array([float(v) if v != "" else np.nan for v in row[3 : 3 + L]])
        records.append(RobustnessRecord(int(row[0]), int(row[1]), dist, int(row[2])))
    return records


def write_matrix_csv(path, matrix, config_digest=None, label="class"):
    buf = io.StringIO()
    if config_digest:
        buf.write(f"# config_hash={config_digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    L = matrix.shape[1]
    w.writerow([label] + [str(n) for n in range(L)])
    for m, row in enumerate(matrix):
        w.writerow([m] + ["" if np.isnan(v) else repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue())


def read_matrix_csv(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))[1:]
    return np.array([[float(v) if v != "" else np.nan for v in r[1:]] for r in rows])
