import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hardlabel_kd import CentroidTeacher, LinearTeacher, exact_boundary_distance
from hardlabel_kd.errors import PreconditionError
from hardlabel_kd.geometry import (
    Mode,
    RobustnessConfig,
    RobustnessRecord,
    binary_search_boundary,
    config_hash,
    distance_heatmap,
    estimate_boundary_gradient,
    group_references,
    minimize_boundary_distance,
    read_matrix_csv,
    read_records_csv,
    robustness_batch,
    robustness_vector,
    sample_distance,
    write_matrix_csv,
    write_records_csv,
)


def test_sample_distance_hand_values():
    refs = [np.zeros((0, 2)), np.array([[3.0, 4.0], [6.0, 8.0]])]
    d = sample_distance(np.zeros(2), refs, own_class=0)
    assert np.isnan(d[0]) and d[1] == 5.0


def test_sample_distance_one_pixel():
    d = sample_distance(np.array([0.9]), [np.zeros((0, 1)), np.array([[0.2]])], own_class=0)
    assert d[1] == pytest.approx(0.7)


def test_sample_distance_to_itself_is_zero():
    x = np.array([0.3, 0.4])
    assert sample_distance(x, [np.zeros((0, 2)), x[None]], 0)[1] == 0.0


def test_sample_distance_needs_references():
    with pytest.raises(PreconditionError):
        sample_distance(np.zeros(2), [np.zeros((0, 2)), np.zeros((0, 2))], 0)


def test_bisection_finds_the_bisector(line_teacher):
    bp = binary_search_boundary(line_teacher, np.array([1.0, 0.0]), np.array([-1.0, 0.0]), Mode.toward(1), 1e-6)
    assert bp.distance == pytest.approx(1.0, abs=1e-6)
    assert bp.inside_class == 1
    assert line_teacher.classify(bp.point) == 1


def test_bisection_rejects_same_label_probe(line_teacher):
    with pytest.raises(PreconditionError):
        binary_search_boundary(line_teacher, np.array([1.0, 0.0]), np.array([2.0, 0.0]), Mode.toward(1))


def test_bisection_degenerate_bracket(line_teacher):
    bp = binary_search_boundary(line_teacher, np.array([1e-7, 0.0]), np.array([-1e-7, 0.0]), Mode.toward(1), 1e-5)
    assert bp.distance < 1e-5


def test_bisection_untargeted_mode():
    t = CentroidTeacher([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]], input_shape=(2,))
    bp = binary_search_boundary(t, np.zeros(2), np.array([0.0, 3.0]), Mode.away_from(0), 1e-6)
    assert bp.distance == pytest.approx(1.0, abs=1e-6)
    assert bp.inside_class == 2


def test_gradient_estimate_aligns_with_normal():
    rng = np.random.default_rng(0)
    # E[cos] ~ sqrt(2Q/pi / (2Q/pi + D - 1)) = 0.966 for Q=200, D=10
    w = rng.standard_normal(10)
    t = LinearTeacher(np.stack([w, -w]), [0.0, 0.0], input_shape=(10,))
    normal = -w / np.linalg.norm(w)  # points into class 1
    cos = []
    for trial in range(9):
        bp = binary_search_boundary(t, w / np.linalg.norm(w), -w / np.linalg.norm(w), Mode.toward(1), 1e-7)
        g = estimate_boundary_gradient(t, bp, 200, 1e-2, Mode.toward(1), rng=trial)
        cos.append(g @ normal)
    assert np.median(cos) > 0.95


def test_gradient_single_probe_is_a_signed_unit_draw(line_teacher):
    bp = binary_search_boundary(line_teacher, np.array([1.0, 0.0]), np.array([-1.0, 0.0]), Mode.toward(1))
    g = estimate_boundary_gradient(line_teacher, bp, 1, 1e-2, Mode.toward(1), rng=5)
    u = np.random.default_rng(5).standard_normal((1, 2))[0]
    assert np.allclose(np.abs(g), np.abs(u) / np.linalg.norm(u))


def test_gradient_all_positive_signs_is_mean_direction():
    # everything is class 1 except far away, so every probe holds
    t = LinearTeacher([[1.0, 0.0], [0.0, 0.0]], [-10.0, 0.0], input_shape=(2,))
    from hardlabel_kd.geometry import BoundaryPoint

    bp = BoundaryPoint(np.zeros(2), 1, 0.0)
    g = estimate_boundary_gradient(t, bp, 50, 1e-2, Mode.toward(1), rng=3)
    u = np.random.default_rng(3).standard_normal((50, 2)).mean(axis=0)
    np.testing.assert_allclose(g, u / np.linalg.norm(u))


def _oblique_instance(seed, dim):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(dim)
    w /= np.linalg.norm(w)
    t = LinearTeacher(np.stack([w, -w]), [0.0, 0.0], input_shape=(dim,))
    x0 = 0.5 * w
    ref = -w + 2.0 * rng.standard_normal(dim)
    if t.classify(ref) != 1:
        ref = -ref
    return t, x0, ref


@pytest.mark.parametrize("seed", range(3))
def test_mbd_recovers_exact_distance(seed):
    t, x0, ref = _oblique_instance(seed, 10)
    bp = binary_search_boundary(t, x0, ref, Mode.toward(1), 1e-6)
    out = minimize_boundary_distance(t, x0, bp, RobustnessConfig(query_limit_per_direction=5000), rng=seed)
    exact = exact_boundary_distance(t, x0, 1)
    assert out.queries <= 5000
    assert abs(out.distance - exact) / exact < 0.02
    assert out.distance <= bp.distance


def test_mbd_fixed_point_at_projection(line_teacher):
    x0 = np.array([1.0, 0.0])
    bp = binary_search_boundary(line_teacher, x0, np.array([-1.0, 0.0]), Mode.toward(1), 1e-6)
    out = minimize_boundary_distance(line_teacher, x0, bp, RobustnessConfig(), rng=0)
    assert out.distance == pytest.approx(bp.distance, abs=1e-4)


def test_mbd_limit_below_one_estimate_returns_initial(line_teacher):
    x0 = np.array([1.0, 0.0])
    bp = binary_search_boundary(line_teacher, x0, np.array([-1.0, 3.0]), Mode.toward(1), 1e-6)
    cfg = RobustnessConfig(gradient_samples=200)
    out = minimize_boundary_distance(line_teacher, x0, bp, cfg, rng=0, query_limit=150)
    assert out.distance == bp.distance
    assert out.queries <= 150


def test_mbd_history_is_a_running_minimum():
    t, x0, ref = _oblique_instance(4, 30)
    bp = binary_search_boundary(t, x0, ref, Mode.toward(1), 1e-6)
    hist = []
    minimize_boundary_distance(t, x0, bp, RobustnessConfig(query_limit_per_direction=3000), rng=1, history=hist)
    d = [h[1] for h in hist]
    assert all(b <= a for a, b in zip(d, d[1:]))
    assert all(q2 > q1 for (q1, _), (q2, _) in zip(hist, hist[1:]))


def _blob_task(seed, L=3, D=5):
    rng = np.random.default_rng(seed)
    c = rng.uniform(0, 1, size=(L, D))
    t = CentroidTeacher(c, input_shape=(D,))
    X = c[rng.integers(0, L, 40)] + 0.1 * rng.standard_normal((40, D))
    return t, X


def test_strategy_dispatch_sd_is_sample_distance():
    t, X = _blob_task(0)
    y = t.classify_batch(X)
    refs = group_references(None, X, 2, seed=0, labels=y)
    rec = robustness_vector(None, X[0], refs, RobustnessConfig(strategy="SD"), own_class=int(y[0]))
    d = sample_distance(X[0], refs, int(y[0]))
    np.testing.assert_array_equal(rec.distances, d)
    assert rec.queries_spent == 0


@given(st.integers(0, 500))
def test_mbd_le_bd_le_sd(seed):
    t, X = _blob_task(seed)
    refs = group_references(t, X, 2, seed=seed)
    if any(len(r) == 0 for r in refs):
        return
    base = dict(reference_per_class=2, query_limit_per_direction=800, gradient_samples=30)
    out = {}
    for s in ("SD", "BD", "MBD"):
        out[s] = robustness_vector(t, X[0], refs, RobustnessConfig(strategy=s, **base), seed=seed).distances
    off = ~np.isnan(out["SD"])
    assert np.all(out["MBD"][off] <= out["BD"][off])
    assert np.all(out["BD"][off] <= out["SD"][off] + 1e-5)


def test_robustness_respects_direction_limit():
    t, X = _blob_task(1, L=4)
    refs = group_references(t, X, 1, seed=0)
    cfg = RobustnessConfig(query_limit_per_direction=300, gradient_samples=20)
    rec = robustness_vector(t, X[3], refs, cfg)
    assert rec.queries_spent <= 3 * 300
    assert np.all(rec.distances[~np.isnan(rec.distances)] >= 1e-8)


def test_batch_is_independent_of_worker_count():
    t, X = _blob_task(2)
    refs = group_references(t, X, 1, seed=0)
    cfg = RobustnessConfig(query_limit_per_direction=300, gradient_samples=20)
    a = robustness_batch(t, X[:8], refs, cfg, seed=3, workers=1)
    b = robustness_batch(t, X[:8], refs, cfg, seed=3, workers=4)
    for r1, r2 in zip(a, b):
        np.testing.assert_array_equal(r1.distances, r2.distances)
        assert r1.queries_spent == r2.queries_spent


def test_heatmap_normalisation():
    recs = [RobustnessRecord(0, 0, np.array([np.nan, 1.0, 3.0])),
            RobustnessRecord(1, 0, np.array([np.nan, 3.0, 5.0])),
            RobustnessRecord(2, 1, np.array([2.0, np.nan, 6.0]))]
    h = distance_heatmap(recs, 3)
    # row means: (2, 4), (2, 6); scaled by (x - 2) / 4
    np.testing.assert_allclose(h[0, 1:], [0.0, 0.5])
    np.testing.assert_allclose(h[1, [0, 2]], [0.0, 1.0])
    assert np.all(np.isnan(np.diag(h))) and np.all(np.isnan(h[2]))


def test_records_csv_round_trip(tmp_path):
    recs = [RobustnessRecord(i, i % 3, np.where(np.arange(3) == i % 3, np.nan, np.random.default_rng(i).random(3)), i)
            for i in range(6)]
    write_records_csv(tmp_path / "r.csv", recs, 3, "abc")
    assert (tmp_path / "r.csv").read_text().startswith("# config_hash=abc\n")
    back = read_records_csv(tmp_path / "r.csv")
    for a, b in zip(recs, back):
        np.testing.assert_array_equal(a.distances, b.distances)
        assert (a.sample_index, a.own_class, a.queries_spent) == (b.sample_index, b.own_class, b.queries_spent)
    m = distance_heatmap(recs, 3)
    write_matrix_csv(tmp_path / "m.csv", m)
    np.testing.assert_array_equal(read_matrix_csv(tmp_path / "m.csv"), m)


def test_config_hash_is_stable():
    a = config_hash(RobustnessConfig().to_dict())
    assert a == config_hash(RobustnessConfig().to_dict())
    assert a != config_hash(RobustnessConfig(epsilon=1e-4).to_dict())
