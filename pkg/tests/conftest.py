import numpy as np
import pytest

from mscl.synth import default_classes, generate_video


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_videos():
    """Two videos per class of the default catalogue, 16x16, 14 frames."""
    out = []
    for mc in default_classes(4):
        for s in range(2):
            out.append(generate_video(mc, F=14, H=16, W=16, seed=100 * mc.id + s))
    return out


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    from mscl.synth import generate_corpus

    root = tmp_path_factory.mktemp("corpus") / "c"
    generate_corpus(root, per_class=4, train_fraction=0.5, frames=14, size=16, seed=5)
    return root


ACCEPTANCE = []


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion."""

    def report(label, ok, detail):
        line = f"{label} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
