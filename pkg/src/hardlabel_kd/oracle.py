"""Hard-label teachers.

Every teacher only answers ``classify``; the query counter is the single piece
of mutable state and is updated under a lock so worker threads can share one
oracle.
"""
import itertools
import json
import threading
from pathlib import Path

import numpy as np

from .errors import BudgetExhaustedError, PreconditionError, ShapeMismatchError

__all__ = [
    "DecisionOracle",
    "LinearTeacher",
    "CentroidTeacher",
    "NetworkOracle",
    "classify",
    "query_count",
    "reset_budget",
    "exact_boundary_distance",
    "load_teacher",
]


class DecisionOracle:
    """Base class: argmax decision over ``_scores`` with query accounting.

    Subclasses implement ``_scores(batch)`` returning ``(n, L)`` scores; the
    scores never leave the object through the public interface.
    """

    def __init__(self, class_count, input_shape, budget=None):
        if class_count < 2:
            raise ValueError("an oracle needs at least two classes")
        self.class_count = int(class_count)
        self.input_shape = tuple(int(d) for d in input_shape)
        self._lock = threading.Lock()
        self._count = 0
        self._budget = None
        self._budget_start = 0
        if budget is not None:
            self.reset_budget(budget)

    @property
    def query_count(self):
        return self._count

    @property
    def budget(self):
        return self._budget

    @property
    def remaining(self):
        if self._budget is None:
            return None
        return self._budget - (self._count - self._budget_start)

    def reset_budget(self, budget):
        """Allow ``budget`` more queries from now on (``None`` lifts the cap).

        The lifetime counter is never reset.
        """
        if budget is not None and budget < 0:
            raise ValueError("budget must be non-negative")
        with self._lock:
            self._budget = None if budget is None else int(budget)
            self._budget_start = self._count

    def _charge(self, n):
        with self._lock:
            if self._budget is not None and self._count - self._budget_start + n > self._budget:
                raise BudgetExhaustedError(
                    f"query budget of {self._budget} exhausted ({self._count - self._budget_start} used)"
                )
            self._count += n

    def _as_batch(self, samples):
        batch = np.asarray(samples)
        if batch.shape[1:] != self.input_shape:
            raise ShapeMismatchError(f"expected samples of shape {self.input_shape}, got {batch.shape[1:]}")
        return batch

    def classify(self, sample):
        sample = np.asarray(sample)
        if sample.shape != self.input_shape:
            raise ShapeMismatchError(f"expected a sample of shape {self.input_shape}, got {sample.shape}")
        self._charge(1)
        return int(np.argmax(self._scores(sample[None])[0]))

    def classify_batch(self, samples):
        """Label a batch; costs one query per sample, charged atomically up front."""
        batch = self._as_batch(samples)
        if len(batch) == 0:
            return np.zeros(0, dtype=np.int64)
        self._charge(len(batch))
        return np.argmax(self._scores(batch), axis=1)

    def _scores(self, batch):
        raise NotImplementedError

    def describe(self):
        return {"kind": type(self).__name__, "classes": self.class_count, "shape": list(self.input_shape)}


def classify(oracle, sample):
    return oracle.classify(sample)


def query_count(oracle):
    return oracle.query_count


def reset_budget(oracle, budget):
    oracle.reset_budget(budget)


class _PolyhedralTeacher(DecisionOracle):
    """Teacher whose class regions are polyhedra ``{z : G z >= h}``."""

    def region_constraints(self, target):
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))


class LinearTeacher(_PolyhedralTeacher):
    """``argmax_k w_k . x + b_k`` over the flattened input."""

    def __init__(self, weights, biases, input_shape=None, budget=None):
        weights = np.array(weights, dtype=np.float64)
        biases = np.array(biases, dtype=np.float64)
        if input_shape is None:
            input_shape = (1, 1, weights.shape[1])
        dim = int(np.prod(input_shape))
        weights = weights.reshape(-1, dim)
        if biases.shape != (weights.shape[0],):
            raise ShapeMismatchError("biases must have one entry per class")
        super().__init__(weights.shape[0], input_shape, budget)
        weights.setflags(write=False)
        biases.setflags(write=False)
        self.weights = weights
        self.biases = biases

    def _scores(self, batch):
        flat = batch.reshape(len(batch), -1).astype(np.float64, copy=False)
        return flat @ self.weights.T + self.biases

    def region_constraints(self, target):
        others = [k for k in range(self.class_count) if k != target]
        G = self.weights[target] - self.weights[others]
        h = self.biases[others] - self.biases[target]
        return G, h

    def to_json(self):
        return {
            "kind": "linear",
            "shape": list(self.input_shape),
            "weights": self.weights.ravel().tolist(),
            "biases": self.biases.tolist(),
        }


class CentroidTeacher(_PolyhedralTeacher):
    """Nearest-centroid rule; regions are Voronoi cells."""

    def __init__(self, centroids, input_shape=None, budget=None):
        centroids = np.array(centroids, dtype=np.float64)
        if input_shape is None:
            input_shape = (1, 1, centroids.shape[1])
        centroids = centroids.reshape(-1, int(np.prod(input_shape)))
        super().__init__(centroids.shape[0], input_shape, budget)
        centroids.setflags(write=False)
        self.centroids = centroids
        self._sq_norms = np.sum(centroids**2, axis=1)

    def _scores(self, batch):
        flat = batch.reshape(len(batch), -1).astype(np.float64, copy=False)
        # -||x - c||^2 up to the per-sample constant ||x||^2
        return 2.0 * flat @ self.centroids.T - self._sq_norms

    def region_constraints(self, target):
        others = [k for k in range(self.class_count) if k != target]
        G = 2.0 * (self.centroids[target] - self.centroids[others])
        h = self._sq_norms[target] - self._sq_norms[others]
        return G, h

    def to_json(self):
        return {"kind": "centroid", "shape": list(self.input_shape), "weights": self.centroids.ravel().tolist(), "biases": []}


class NetworkOracle(DecisionOracle):
    """Hard-label view of a trained network (argmax of its pre-softmax output)."""

    def __init__(self, network, budget=None, batch_size=1024):
        super().__init__(network.spec.class_count, network.spec.input_shape, budget)
        self._network = network
        self._batch_size = batch_size

    def _scores(self, batch):
        net = self._network
        if len(batch) <= self._batch_size:
            return net.forward(batch.astype(net.dtype, copy=False), train=False)
        return np.concatenate(
            [net.forward(batch[i : i + self._batch_size].astype(net.dtype, copy=False), train=False)
             for i in range(0, len(batch), self._batch_size)]
        )

    def describe(self):
        return {"kind": "network", "classes": self.class_count, "shape": list(self.input_shape),
                "parameters": int(self._network.parameters.size)}


def load_teacher(source, budget=None):
    """Build an analytic teacher from a JSON document (dict, str or path)."""
    if isinstance(source, (str, Path)) and not str(source).lstrip().startswith("{"):
        doc = json.loads(Path(source).read_text())
    elif isinstance(source, (str, bytes)):
        doc = json.loads(source)
    else:
        doc = source
    kind = doc.get("kind")
    shape = tuple(doc["shape"])
    if kind == "linear":
        return LinearTeacher(doc["weights"], doc["biases"], input_shape=shape, budget=budget)
    if kind == "centroid":
        return CentroidTeacher(doc["weights"], input_shape=shape, budget=budget)
    raise ValueError(f"unknown teacher kind {kind!r}")


def _project_onto_polyhedron(x, G, h, tol=1e-9):
    """Exact Euclidean projection of ``x`` onto ``{z : G z >= h}``.

    The projection lies on the affine hull of its active constraints, so the
    minimum over every feasible active-set projection is exact.  Enumeration is
    exponential in the number of constraints and only used for small ``L``.
    """
    residual = G @ x - h
    if np.all(residual >= -tol):
        return x.copy(), 0.0
    scale = np.maximum(np.linalg.norm(G, axis=1), 1e-300)
    best, best_dist = None, np.inf
    rows = range(len(h))
    for size in range(1, len(h) + 1):
        for active in itertools.combinations(rows, size):
            Ga = G[list(active)]
            ha = h[list(active)]
            step = np.linalg.lstsq(Ga @ Ga.T, Ga @ x - ha, rcond=None)[0]
            z = x - Ga.T @ step
            if np.all((G @ z - h) / scale >= -tol):
                dist = float(np.linalg.norm(z - x))
                if dist < best_dist:
                    best, best_dist = z, dist
    if best is None:
        raise PreconditionError("target region is empty")
    return best, best_dist


def _project_slsqp(x, G, h):
    from scipy.optimize import minimize

    res = minimize(
        lambda z: 0.5 * np.sum((z - x) ** 2),
        x,
        jac=lambda z: z - x,
        constraints=[{"type": "ineq", "fun": lambda z: G @ z - h, "jac": lambda z: G}],
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 500},
    )
    return res.x, float(np.linalg.norm(res.x - x))


def exact_boundary_distance(teacher, sample, target_class, return_point=False):
    """Minimal l2 distance from ``sample`` to the region labelled ``target_class``."""
    if not isinstance(teacher, _PolyhedralTeacher):
        raise TypeError("exact distances need an analytic teacher")
    x = np.asarray(sample, dtype=np.float64)
    if x.shape != teacher.input_shape:
        raise ShapeMismatchError(f"expected a sample of shape {teacher.input_shape}, got {x.shape}")
    x = x.ravel()
    own = int(np.argmax(teacher._scores(x[None])[0]))
    if own == target_class:
        raise PreconditionError("target class equals the sample's own class")
    G, h = teacher.region_constraints(target_class)
    if len(h) <= 12:
        point, dist = _project_onto_polyhedron(x, G, h)
    else:
        point, dist = _project_slsqp(x, G, h)
    if return_point:
        return dist, point.reshape(teacher.input_shape)
    return dist


def nearest_boundary_distance(teacher, sample):
    """Distance from ``sample`` to the closest region of any other class."""
    own = int(np.argmax(teacher._scores(np.asarray(sample, dtype=np.float64).reshape(1, -1))[0]))
    return min(exact_boundary_distance(teacher, sample, n) for n in range(teacher.class_count) if n != own)
