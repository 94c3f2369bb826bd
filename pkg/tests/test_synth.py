import numpy as np
import pytest

from hardlabel_kd import CentroidTeacher, LinearTeacher, exact_boundary_distance
from hardlabel_kd.errors import ConfigError, PreconditionError
from hardlabel_kd.geometry import RobustnessConfig
from hardlabel_kd.synth import (
    AugmentationPolicy,
    GenerationConfig,
    PseudoSample,
    augment,
    augment_and_recover,
    generate_pseudo_samples,
    generation_report,
    init_noise,
    maximize_boundary_distance,
    recover_label,
    variant_count,
)

FAST = RobustnessConfig(gradient_samples=30, query_limit_per_direction=500)


def half_plane():
    # class 0 iff x1 > 0.5
    return LinearTeacher([[1.0, 0.0], [-1.0, 0.0]], [-0.5, 0.5], input_shape=(2,))


def test_noise_half_space_needs_few_draws():
    t = half_plane()
    draws = []
    for seed in range(41):
        before = t.query_count
        ps = init_noise(t, 0, GenerationConfig(), np.random.default_rng(seed))
        assert ps.teacher_class == 0 and not ps.fallback
        draws.append(t.query_count - before)
    assert np.median(draws) <= 2


def test_unreachable_class_falls_back():
    t = LinearTeacher([[1.0, 0.0], [-1.0, 0.0]], [5.0, -5.0], input_shape=(2,))  # class 1 needs x1 < -5
    ps = init_noise(t, 1, GenerationConfig(max_noise_draws=20), 0)
    assert ps.fallback and ps.teacher_class == 0 and ps.target_class == 1


def test_noise_is_seeded():
    t = half_plane()
    a = init_noise(t, 0, rng=np.random.default_rng(3))
    b = init_noise(t, 0, rng=np.random.default_rng(3))
    np.testing.assert_array_equal(a.tensor, b.tensor)


def test_ascent_moves_away_by_the_step():
    t = LinearTeacher([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0], input_shape=(2,))
    cfg = GenerationConfig(outer_iterations=10, ascent_step=0.1, clip_range=(-10, 10), probes_per_step=2,
                           mbd_query_limit=1000, robustness=RobustnessConfig(gradient_samples=50))
    start = PseudoSample(np.array([0.5, 0.0]), 0)
    out = maximize_boundary_distance(t, start, cfg, np.random.default_rng(0))
    gained = exact_boundary_distance(t, out.tensor, 1) - 0.5
    assert gained == pytest.approx(1.0, rel=0.2)
    assert len(out.boundary_distance_trace) == 10
    assert t.classify(out.tensor) == 0


def test_zero_step_keeps_the_sample():
    t = half_plane()
    cfg = GenerationConfig(outer_iterations=4, ascent_step=0.0, robustness=FAST, mbd_query_limit=300)
    start = PseudoSample(np.array([0.8, 0.3]), 0)
    out = maximize_boundary_distance(t, start, cfg, 0)
    np.testing.assert_array_equal(out.tensor, start.tensor)
    assert len(set(out.boundary_distance_trace)) == 1 and len(out.boundary_distance_trace) == 4


def test_saturated_sample_plateaus():
    t = half_plane()
    cfg = GenerationConfig(outer_iterations=6, ascent_step=0.5, robustness=FAST, mbd_query_limit=300)
    out = maximize_boundary_distance(t, PseudoSample(np.array([1.0, 0.5]), 0), cfg, 1)
    assert out.tensor[0] == 1.0
    tr = out.boundary_distance_trace
    assert max(tr) - min(tr) < 0.05


def test_accepted_trace_is_non_decreasing_on_a_half_plane():
    t = half_plane()
    cfg = GenerationConfig(outer_iterations=8, ascent_step=0.05, robustness=RobustnessConfig(gradient_samples=50),
                           mbd_query_limit=1500)
    out = maximize_boundary_distance(t, PseudoSample(np.array([0.55, 0.5]), 0), cfg, 2)
    tr = out.boundary_distance_trace
    assert all(b >= a - 1e-3 for a, b in zip(tr, tr[1:]))


def test_budget_exhaustion_marks_partial():
    t = half_plane()
    t.reset_budget(400)
    cfg = GenerationConfig(outer_iterations=50, robustness=FAST, mbd_query_limit=300)
    out = maximize_boundary_distance(t, PseudoSample(np.array([0.8, 0.3]), 0), cfg, 0)
    assert out.partial and t.remaining >= 0


def test_generation_report_and_worker_independence():
    t = CentroidTeacher([[0.2, 0.2], [0.8, 0.2], [0.5, 0.8]])
    cfg = GenerationConfig(outer_iterations=2, per_class_quota=3, robustness=FAST, mbd_query_limit=200, seed=4)
    a = generate_pseudo_samples(t, cfg, workers=1)
    b = generate_pseudo_samples(t, cfg, workers=3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.tensor, y.tensor)
    rep = generation_report(a, 3)
    assert sum(rep["per_class_counts"]) == 3 * 3
    assert len(rep["mean_trace"]) == 2 and rep["queries_total"] > 0


def test_variant_counts():
    x = np.zeros((1, 1, 28, 28))
    for strategies, n in [(("pad_crop",), 25), (("rotate",), 6), (("hflip", "vflip"), 2),
                          (("pad_crop_flip",), 50), (("pad_crop_rotate",), 150)]:
        policy = AugmentationPolicy(strategies)
        aug, prov = augment(x, policy)
        assert len(aug) == n == variant_count(policy, x.shape[1:])
        assert all(p == 0 for p, _ in prov)


def test_hflip_twice_is_identity():
    x = np.random.default_rng(0).random((1, 1, 5, 5))
    once, _ = augment(x, AugmentationPolicy(("hflip",)))
    twice, _ = augment(once, AugmentationPolicy(("hflip",)))
    np.testing.assert_array_equal(twice, x)


def test_crop_centre_is_identity():
    x = np.random.default_rng(0).random((1, 1, 6, 6))
    aug, prov = augment(x, AugmentationPolicy(("pad_crop",)))
    centre = [k for k, (_, tag) in enumerate(prov) if tag == "crop(2,2)"][0]
    np.testing.assert_array_equal(aug[centre], x[0])


def test_policy_checks():
    with pytest.raises(PreconditionError):
        augment(np.zeros((1, 1, 2, 5)))
    with pytest.raises(ConfigError):
        AugmentationPolicy(("shear",))


def test_recover_identity_and_bisector():
    t = LinearTeacher([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0], input_shape=(2,))
    x = np.array([0.3, 0.1])
    assert recover_label(t, x, x, 0) is x
    out = recover_label(t, np.array([-1.0, 0.0]), np.array([1.0, 0.0]), 0, RobustnessConfig(epsilon=1e-6))
    assert t.classify(out) == 0
    assert abs(out[0]) < 1e-5


def test_recover_drops_mislabelled_parent():
    t = LinearTeacher([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0], input_shape=(2,))
    assert recover_label(t, np.array([-1.0, 0.0]), np.array([-0.5, 0.0]), 0) is None


def test_augment_and_recover_keeps_parent_classes():
    rng = np.random.default_rng(0)
    cent = rng.random((3, 1, 8, 8))
    t = CentroidTeacher(cent.reshape(3, -1), input_shape=(1, 8, 8))
    parents = np.clip(cent + 0.05 * rng.standard_normal(cent.shape), 0, 1).astype(np.float32)
    classes = t.classify_batch(parents)
    out, prov, dropped = augment_and_recover(t, parents, classes, AugmentationPolicy(("pad_crop", "rotate")))
    assert dropped == 0 and len(out) == 3 * 31
    np.testing.assert_array_equal(t.classify_batch(out), classes[[p for p, _ in prov]])


def test_generation_config_validation():
    with pytest.raises(ConfigError):
        GenerationConfig(probes_per_step=0)
    assert GenerationConfig(robustness={"gradient_samples": 7}).robustness.gradient_samples == 7
