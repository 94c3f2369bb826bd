"""scikit-learn style wrappers around the functional core.

``X`` may be given either as image tensors ``(N, C, W, H)`` or flattened
``(N, C*W*H)``; the estimators reshape to the shape they were configured for.
"""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ShapeMismatchError
from .geometry import RobustnessConfig, RobustnessRecord, group_references, robustness_batch
from .labels import LabelConfig, TransferSet, construct_activations, soften
from .nn import DistillConfig, Network, preset, softmax, train_classifier, train_student
from .synth import GenerationConfig, generate_pseudo_samples, generation_report

__all__ = [
    "check_images",
    "check_distances",
    "BoundaryRobustness",
    "RobustnessSoftLabels",
    "DistilledStudent",
    "PseudoSampleGenerator",
]


def check_images(X, shape=None, dtype=np.float64):
    """Validate a sample batch and return it as ``(N,) + shape``."""
    X = np.asarray(X, dtype=dtype)
    if X.ndim < 2:
        raise ShapeMismatchError(f"expected a batch of samples, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("samples contain NaN or infinite values")
    if shape is None:
        return X
    shape = tuple(shape)
    if X.shape[1:] == shape:
        return X
    if X.ndim == 2 and X.shape[1] == int(np.prod(shape)):
        return X.reshape((len(X),) + shape)
    raise ShapeMismatchError(f"samples of shape {X.shape[1:]} do not fit {shape}")


def check_distances(D):
    """Robustness matrix: one NaN (own class) per row, positive elsewhere."""
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2:
        raise ShapeMismatchError("robustness must be a 2-D (samples, classes) array")
    nan = np.isnan(D)
    if np.any(nan.sum(axis=1) != 1):
        raise ValueError("every row needs exactly one missing (own-class) entry")
    if np.any(D[~nan] <= 0):
        raise ValueError("robustness entries must be positive")
    return D


class BoundaryRobustness(TransformerMixin, BaseEstimator):
    """Transform samples into their per-class robustness against ``oracle``.

    ``fit`` draws the reference samples; ``transform`` returns an ``(N, L)``
    matrix with NaN in each sample's own-class column.
    """

    def __init__(self, oracle=None, strategy="MBD", reference_per_class=1, epsilon=1e-5, gradient_samples=200,
                 probe_radius=1e-2, descent_step=0.2, query_limit_per_direction=5000, patience=3, seed=0,
                 workers=1):
        self.oracle = oracle
        self.strategy = strategy
        self.reference_per_class = reference_per_class
        self.epsilon = epsilon
        self.gradient_samples = gradient_samples
        self.probe_radius = probe_radius
        self.descent_step = descent_step
        self.query_limit_per_direction = query_limit_per_direction
        self.patience = patience
        self.seed = seed
        self.workers = workers

    def _config(self):
        return RobustnessConfig(
            strategy=self.strategy,
            reference_per_class=self.reference_per_class,
            epsilon=self.epsilon,
            gradient_samples=self.gradient_samples,
            probe_radius=self.probe_radius,
            descent_step=self.descent_step,
            query_limit_per_direction=self.query_limit_per_direction,
            patience=self.patience,
        )

    def fit(self, X, y=None):
        X = check_images(X, self.oracle.input_shape)
        self.config_ = self._config()
        # SD never queries, so it groups references by the given labels
        if self.config_.strategy.value == "SD" and y is not None:
            self.references_ = group_references(None, X, self.reference_per_class, self.seed, labels=y)
        else:
            self.references_ = group_references(self.oracle, X, self.reference_per_class, self.seed)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X, y=None):
        check_is_fitted(self, "references_")
        X = check_images(X, self.oracle.input_shape)
        self.records_ = robustness_batch(self.oracle, X, self.references_, self.config_, seed=self.seed,
                                         workers=self.workers, own_classes=y)
        return np.stack([r.distances for r in self.records_]) if self.records_ else np.zeros((0, self.oracle.class_count))


class RobustnessSoftLabels(TransformerMixin, BaseEstimator):
    """Robustness matrix -> soft-label probabilities (stateless)."""

    def __init__(self, temperature=0.3, soften_teacher=True):
        self.temperature = temperature
        self.soften_teacher = soften_teacher

    def fit(self, D, y=None):
        LabelConfig(self.temperature)
        self.n_features_in_ = np.asarray(D).shape[1]
        return self

    def activations(self, D):
        D = check_distances(D)
        out = np.empty_like(D)
        for i, row in enumerate(D):
            m = int(np.flatnonzero(np.isnan(row))[0])
            out[i] = construct_activations(RobustnessRecord(i, m, row))
        return out

    def transform(self, D):
        a = self.activations(D)
        return soften(a, self.temperature if self.soften_teacher else 1.0)


class DistilledStudent(ClassifierMixin, BaseEstimator):
    """Student network trained with the KD objective.

    ``fit(X, y)`` accepts hard labels ``(N,)`` (plain cross-entropy) or a soft
    target matrix ``(N, L)``, whose argmax then serves as the hard label.
    """

    def __init__(self, architecture="lenet-tiny-half", input_shape=(1, 28, 28), temperature=0.3, balance=1.0,
                 optimizer="adam", learning_rate=5e-3, epochs=20, batch_size=64, schedule="constant", seed=0):
        self.architecture = architecture
        self.input_shape = input_shape
        self.temperature = temperature
        self.balance = balance
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.schedule = schedule
        self.seed = seed

    def _config(self, balance):
        return DistillConfig(temperature=self.temperature, balance=balance, optimizer=self.optimizer,
                             learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
                             schedule=self.schedule, seed=self.seed)

    def fit(self, X, y):
        X = check_images(X, self.input_shape, np.float32)
        y = np.asarray(y)
        soft = y.ndim == 2
        L = y.shape[1] if soft else int(y.max()) + 1
        self.classes_ = np.arange(L)
        self.network_ = Network(preset(self.architecture, self.input_shape, L), seed=self.seed)
        if soft:
            ts = TransferSet(X, y, np.argmax(y, axis=1))
            result = train_student(self.network_, ts, self._config(self.balance))
        else:
            result = train_classifier(self.network_, X, y.astype(np.int64), self._config(0.0))
        self.history_ = result.history
        self.n_features_in_ = int(np.prod(self.input_shape))
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        return self.network_.activations(check_images(X, self.input_shape, np.float32))

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)


class PseudoSampleGenerator(BaseEstimator):
    """Zero-shot sample generator; ``fit`` runs the generation."""

    def __init__(self, oracle=None, probes_per_step=5, ascent_step=0.5, outer_iterations=40, mbd_query_limit=5000,
                 per_class_quota=10, gradient_samples=200, seed=0, workers=1):
        self.oracle = oracle
        self.probes_per_step = probes_per_step
        self.ascent_step = ascent_step
        self.outer_iterations = outer_iterations
        self.mbd_query_limit = mbd_query_limit
        self.per_class_quota = per_class_quota
        self.gradient_samples = gradient_samples
        self.seed = seed
        self.workers = workers

    def fit(self, X=None, y=None):
        cfg = GenerationConfig(
            probes_per_step=self.probes_per_step,
            ascent_step=self.ascent_step,
            outer_iterations=self.outer_iterations,
            mbd_query_limit=self.mbd_query_limit,
            per_class_quota=self.per_class_quota,
            seed=self.seed,
            robustness=RobustnessConfig(gradient_samples=self.gradient_samples),
        )
        self.samples_ = generate_pseudo_samples(self.oracle, cfg, workers=self.workers)
        self.report_ = generation_report(self.samples_, self.oracle.class_count)
        return self

    def sample(self):
        """``(X, classes)`` of the generated set."""
        check_is_fitted(self, "samples_")
        X = np.stack([s.tensor for s in self.samples_]).astype(np.float32)
        return X, np.array([s.teacher_class for s in self.samples_], dtype=np.int64)
