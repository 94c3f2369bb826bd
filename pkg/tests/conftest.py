from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = ROOT / "data" / "mnist10k"


def two_class_line():
    """w0=(1,0), w1=(-1,0), b=0: boundary is the x2 axis."""
    from hardlabel_kd import LinearTeacher

    return LinearTeacher([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0], input_shape=(2,))


@pytest.fixture
def line_teacher():
    return two_class_line()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results, key=lambda k: (int(str(k).rstrip("ab")), str(k))):
            terminalreporter.write_line(results[key])
