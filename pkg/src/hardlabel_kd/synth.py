"""Pseudo-sample synthesis from a hard-label teacher.

Uniform noise of class ``m`` is pushed away from the nearest decision
boundary: locate boundary points towards noises of other classes, refine
them with boundary descent, then step the sample against the boundary normal
at the closest one.  Augmentation with top-1 recovery enriches the result.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .errors import BudgetExhaustedError, ConfigError, EstimationError, PreconditionError
from .geometry import (
    Mode,
    RobustnessConfig,
    _bisect,
    _Meter,
    binary_search_boundary,
    estimate_boundary_gradient,
    minimize_boundary_distance,
)

__all__ = [
    "GenerationConfig",
    "PseudoSample",
    "AugmentationPolicy",
    "init_noise",
    "maximize_boundary_distance",
    "generate_pseudo_samples",
    "generation_report",
    "augment",
    "variant_count",
    "recover_label",
    "augment_and_recover",
]

ROTATION_ANGLES = (-15, -10, -5, 5, 10, 15)
STRATEGIES = ("pad_crop", "hflip", "vflip", "rotate", "pad_crop_flip", "pad_crop_rotate")


@dataclass
class GenerationConfig:
    probes_per_step: int = 5
    ascent_step: float = 0.5
    outer_iterations: int = 40
    mbd_query_limit: int = 5000
    per_class_quota: int = 10
    clip_range: tuple = (0.0, 1.0)
    seed: int = 0
    max_noise_draws: int = 1000
    max_halvings: int = 5
    robustness: RobustnessConfig = field(default_factory=RobustnessConfig)

    def __post_init__(self):
        if isinstance(self.robustness, dict):
            self.robustness = RobustnessConfig(**self.robustness)
        self.clip_range = tuple(float(v) for v in self.clip_range)
        if self.probes_per_step < 1:
            raise ConfigError("probes_per_step must be >= 1")
        if self.ascent_step < 0:
            raise ConfigError("ascent_step must be non-negative")
        if self.outer_iterations < 0 or self.per_class_quota < 0:
            raise ConfigError("outer_iterations and per_class_quota must be non-negative")
        if self.mbd_query_limit < 1 or self.max_noise_draws < 1:
            raise ConfigError("mbd_query_limit and max_noise_draws must be >= 1")
        lo, hi = self.clip_range
        if not lo < hi:
            raise ConfigError("clip_range must be an increasing pair")

    def to_dict(self):
        d = asdict(self)
        d["robustness"] = self.robustness.to_dict()
        d["clip_range"] = list(self.clip_range)
        return d


@dataclass
class PseudoSample:
    tensor: np.ndarray
    teacher_class: int
    boundary_distance_trace: list = field(default_factory=list)
    queries_spent: int = 0
    target_class: int = None
    fallback: bool = False
    partial: bool = False


def _noise(rng, shape, clip_range):
    lo, hi = clip_range
    return rng.uniform(lo, hi, size=shape)


def _sample_rng(seed, cls, slot):
    return np.random.default_rng([int(seed), int(cls), int(slot)])


def init_noise(oracle, cls, config=None, rng=None):
    """Rejection-sample uniform noise until the teacher calls it ``cls``.

    After ``max_noise_draws`` misses the last draw is kept with whatever
    class the teacher gives it and the sample is flagged ``fallback``.
    """
    config = config or GenerationConfig()
    rng = np.random.default_rng(rng)
    start = oracle.query_count
    for _ in range(config.max_noise_draws):
        x = _noise(rng, oracle.input_shape, config.clip_range)
        label = oracle.classify(x)
        if label == cls:
            return PseudoSample(x, int(label), [], oracle.query_count - start, int(cls))
    return PseudoSample(x, int(label), [], oracle.query_count - start, int(cls), fallback=True)


def _closest_boundary(meter, o, m, config, rng):
    """Closest refined boundary point among ``T`` probe directions, or None."""
    mode = Mode.away_from(m)
    rcfg = config.robustness
    best = None
    for _ in range(config.probes_per_step):
        probe = None
        for _ in range(config.max_noise_draws):
            cand = _noise(rng, o.shape, config.clip_range)
            label = meter.classify(cand)
            if label != m:
                probe = cand
                break
        if probe is None:
            continue
        bp = binary_search_boundary(meter, o, probe, mode, rcfg.epsilon, checked=True, probe_label=label)
        sub = _Meter(meter, config.mbd_query_limit - bp.queries)
        bp = minimize_boundary_distance(sub, o, bp, rcfg, mode, rng)
        if best is None or bp.distance < best.distance:
            best = bp
    return best


def maximize_boundary_distance(oracle, sample, config=None, rng=None):
    """Run the outer ascent loop on ``sample`` (modified copy is returned).

    The trace gets the distance from the current sample to its closest
    boundary point once per outer iteration.  Running out of oracle budget
    returns the sample as it stands, flagged ``partial``.
    """
    config = config or GenerationConfig()
    rng = np.random.default_rng(rng)
    o = np.array(sample.tensor, dtype=np.float64)
    m = sample.teacher_class
    trace = list(sample.boundary_distance_trace)
    meter = _Meter(oracle)
    lo, hi = config.clip_range
    rcfg = config.robustness
    partial = False
    try:
        for _ in range(config.outer_iterations):
            if config.ascent_step == 0 and trace:
                # the sample cannot move, so neither can its distance
                trace.append(trace[-1])
                continue
            star = _closest_boundary(meter, o, m, config, rng)
            if star is None:
                break
            trace.append(float(star.distance))
            if config.ascent_step == 0:
                continue
            g = estimate_boundary_gradient(meter, star, rcfg.gradient_samples, rcfg.probe_radius,
                                           Mode.away_from(m), rng)
            step = config.ascent_step
            for _ in range(config.max_halvings + 1):
                cand = np.clip(o - step * g, lo, hi)
                if meter.classify(cand) == m:
                    o = cand
                    break
                step *= 0.5
    except BudgetExhaustedError:
        partial = True
    except EstimationError:
        pass
    return PseudoSample(o, m, trace, sample.queries_spent + meter.spent, sample.target_class,
                        sample.fallback, partial)


def generate_pseudo_samples(oracle, config=None, *, classes=None, workers=1, progress=None):
    """Generate ``per_class_quota`` samples per class.

    Every (class, slot) job draws from its own RNG stream seeded by
    ``(seed, class, slot)``, so the output does not depend on ``workers``.
    """
    config = config or GenerationConfig()
    classes = range(oracle.class_count) if classes is None else classes
    jobs = [(c, s) for c in classes for s in range(config.per_class_quota)]

    def run(job):
        rng = _sample_rng(config.seed, *job)
        ps = init_noise(oracle, job[0], config, rng)
        return maximize_boundary_distance(oracle, ps, config, rng)

    out = []
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            for k, ps in enumerate(pool.map(run, jobs)):
                out.append(ps)
                if progress:
                    progress(k + 1, len(jobs))
    else:
        for k, job in enumerate(jobs):
            out.append(run(job))
            if progress:
                progress(k + 1, len(jobs))
    return out


def generation_report(samples, class_count, dropped=0):
    counts = np.bincount([s.teacher_class for s in samples], minlength=class_count)
    traces = [s.boundary_distance_trace for s in samples if s.boundary_distance_trace]
    width = max((len(t) for t in traces), default=0)
    mean_trace = []
    for k in range(width):
        vals = [t[k] for t in traces if len(t) > k]
        mean_trace.append(float(np.mean(vals)))
    return {
        "per_class_counts": counts.tolist(),
        "mean_trace": mean_trace,
        "queries_total": int(sum(s.queries_spent for s in samples)),
        "dropped": int(dropped),
        "fallback": int(sum(s.fallback for s in samples)),
        "partial": int(sum(s.partial for s in samples)),
    }


@dataclass
class AugmentationPolicy:
    strategies: tuple = ("pad_crop", "hflip", "vflip")
    pad: int = 2
    angles: tuple = ROTATION_ANGLES

    def __post_init__(self):
        self.strategies = tuple(self.strategies)
        self.angles = tuple(self.angles)
        unknown = set(self.strategies) - set(STRATEGIES)
        if unknown:
            raise ConfigError(f"unknown augmentation strategies {sorted(unknown)}")
        if self.pad < 0:
            raise ConfigError("pad must be non-negative")

    def check(self, shape):
        w, h = shape[-2:]
        if len(shape) < 2 or min(w, h) < 3:
            raise PreconditionError(f"image shape {tuple(shape)} too small for augmentation")


def _crops(x, pad):
    w, h = x.shape[-2:]
    padded = np.pad(x, [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)])
    out = []
    for i in range(2 * pad + 1):
        for j in range(2 * pad + 1):
            out.append((padded[..., i : i + w, j : j + h], f"crop({i},{j})"))
    return out


def _flips(x, tag=""):
    return [(x[..., ::-1], tag + "hflip"), (x[..., ::-1, :], tag + "vflip")]


def _rotations(x, angles, tag=""):
    out = []
    for a in angles:
        r = ndimage.rotate(x, a, axes=(-1, -2), reshape=False, order=1, mode="constant", cval=0.0)
        out.append((np.clip(r, 0.0, 1.0), f"{tag}rot({a})"))
    return out


def _variants(x, policy):
    out = []
    for s in policy.strategies:
        if s == "pad_crop":
            out += _crops(x, policy.pad)
        elif s == "hflip":
            out.append(_flips(x)[0])
        elif s == "vflip":
            out.append(_flips(x)[1])
        elif s == "rotate":
            out += _rotations(x, policy.angles)
        elif s == "pad_crop_flip":
            for c, tag in _crops(x, policy.pad):
                out += _flips(c, tag + "+")
        elif s == "pad_crop_rotate":
            for c, tag in _crops(x, policy.pad):
                out += _rotations(c, policy.angles, tag + "+")
    return out


def variant_count(policy, shape=None):
    """Closed-form number of variants produced per sample."""
    crops = (2 * policy.pad + 1) ** 2
    per = {"pad_crop": crops, "hflip": 1, "vflip": 1, "rotate": len(policy.angles),
           "pad_crop_flip": 2 * crops, "pad_crop_rotate": crops * len(policy.angles)}
    if shape is not None:
        policy.check(shape)
    return sum(per[s] for s in policy.strategies)


def augment(samples, policy=None):
    """All variants of every sample; returns ``(array, provenance)``.

    ``provenance[k]`` is ``(parent_index, descriptor)`` for row ``k``.
    """
    policy = policy or AugmentationPolicy()
    samples = np.asarray(samples)
    policy.check(samples.shape[1:])
    rows, prov = [], []
    for idx, x in enumerate(samples):
        for v, tag in _variants(x, policy):
            rows.append(np.ascontiguousarray(v))
            prov.append((idx, tag))
    if not rows:
        return np.zeros((0,) + samples.shape[1:], dtype=samples.dtype), prov
    return np.stack(rows).astype(samples.dtype, copy=False), prov


def recover_label(oracle, augmented, parent, parent_class, config=None):
    """Return a version of ``augmented`` the teacher labels ``parent_class``.

    Unchanged if the label already matches; otherwise the point on the
    segment towards ``parent`` just past the class boundary.  Returns None
    when the parent itself is no longer labelled ``parent_class``.
    """
    config = config or RobustnessConfig()
    augmented = np.asarray(augmented)
    dtype = augmented.dtype if augmented.dtype.kind == "f" else np.float64
    if oracle.classify(augmented) == parent_class:
        return augmented
    parent = np.asarray(parent, dtype=dtype)
    if oracle.classify(parent) != parent_class:
        return None
    x0 = augmented.astype(np.float64)
    span = parent - x0
    length = float(np.linalg.norm(span))
    direction = span / length
    bp = _bisect(_Meter(oracle), x0, direction, length, Mode.toward(parent_class), config.epsilon, parent_class)
    # rounding to the storage dtype may cross back; walk further towards the parent
    alpha, step = bp.distance, config.epsilon
    while alpha < length:
        x = (x0 + alpha * direction).astype(dtype)
        if oracle.classify(x) == parent_class:
            return x
        alpha += step
        step *= 2.0
    return parent


def augment_and_recover(oracle, samples, classes, policy=None, config=None):
    """Augment and pull every variant back to its parent's class.

    Returns ``(array, provenance, dropped)``; variants whose parent lost its
    class are dropped.
    """
    aug, prov = augment(samples, policy)
    keep, rows = [], []
    dropped = 0
    for k, (parent, _) in enumerate(prov):
        x = recover_label(oracle, aug[k], samples[parent], int(classes[parent]), config)
        if x is None:
            dropped += 1
            continue
        rows.append(x)
        keep.append(prov[k])
    if not rows:
        return np.zeros((0,) + np.asarray(samples).shape[1:], dtype=np.float32), keep, dropped
    return np.stack(rows).astype(np.float32), keep, dropped
