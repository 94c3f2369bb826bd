import numpy as np
import pytest

from hardlabel_kd.data import SyntheticSpec, generate_synthetic
from hardlabel_kd.errors import ConfigError
from hardlabel_kd.geometry import RobustnessConfig
from hardlabel_kd.nn import DistillConfig, Network, evaluate, preset, train_classifier
from hardlabel_kd.pipelines import METHODS, default_recipe, distill, robustness_transfer_set


@pytest.fixture(scope="module")
def task():
    ds, teacher = generate_synthetic(SyntheticSpec(per_class=20, seed=1))
    net = Network(preset("mlp-small", (1, 1, 2), 3), seed=0)
    train_classifier(net, ds.images, ds.labels, DistillConfig(epochs=30, learning_rate=0.02, batch_size=16))
    return ds, teacher, net


def test_recipes():
    assert default_recipe("student-ce").balance == 0
    kd = default_recipe("standard-kd")
    assert (kd.temperature, kd.balance) == (20.0, 1.0)
    sk = default_recipe("surrogate-kd")
    assert (sk.temperature, sk.balance) == (3.0, 0.7)
    assert default_recipe("db3kd").temperature == 0.3
    with pytest.raises(ConfigError):
        default_recipe("magic")


@pytest.mark.parametrize("method", METHODS)
def test_every_method_trains(task, method):
    ds, teacher, net = task
    cfg = default_recipe(method, DistillConfig(epochs=3, learning_rate=0.02, batch_size=16))
    transfer = None
    if method == "db3kd":
        transfer, _ = robustness_transfer_set(teacher, ds.images, RobustnessConfig(strategy="BD"))
    student, hist = distill(method, ds.images, ds.labels, "mlp-tiny", cfg, teacher=net, transfer=transfer,
                            eval_data=(ds.images, ds.labels), seed=0, class_count=3)
    assert len(hist) == 3 and "test_accuracy" in hist[-1]


def test_missing_inputs_are_config_errors(task):
    ds, _, _ = task
    with pytest.raises(ConfigError):
        distill("standard-kd", ds.images, ds.labels, "mlp-tiny")
    with pytest.raises(ConfigError):
        distill("db3kd", ds.images, ds.labels, "mlp-tiny")


def test_zero_balance_reduces_to_cross_entropy(task):
    ds, _, _ = task
    cfg = DistillConfig(epochs=2, balance=0.0)
    a, _ = distill("student-ce", ds.images, ds.labels, "mlp-tiny", cfg, seed=5)
    b, _ = distill("noise-logits", ds.images, ds.labels, "mlp-tiny", cfg, seed=5)
    assert a.parameters.tobytes() == b.parameters.tobytes()


def test_transfer_set_metadata(task):
    ds, teacher, _ = task
    ts, recs = robustness_transfer_set(teacher, ds.images[:9], RobustnessConfig(strategy="BD"), seed=2)
    assert ts.metadata["strategy"] == "BD" and ts.metadata["seed"] == 2
    assert ts.metadata["oracle"]["kind"] == "CentroidTeacher"
    np.testing.assert_array_equal(ts.top1, [r.own_class for r in recs])
