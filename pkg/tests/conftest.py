import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helmnet.data import generate_synthetic_corpus  # noqa: E402

_criteria: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        n, title = marker.args
        status = "PASS" if rep.outcome == "passed" else "FAIL"
        _criteria.append((f"{n:>2}", f"{status}  criterion {n}: {title}"))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_criteria, key=lambda t: int(t[0])):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    """150 images per class at 64x64: the desk-scale corpus."""
    root = tmp_path_factory.mktemp("synth")
    generate_synthetic_corpus(150, 64, seed=7, out_dir=root)
    return root


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    """A small 32x32 corpus for fast training-loop tests."""
    root = tmp_path_factory.mktemp("tiny")
    generate_synthetic_corpus(12, 32, seed=3, out_dir=root)
    return root
