import re

import numpy as np
import pytest

from landmark_gate.core import NormalizationSpec
from landmark_gate.pipeline import FIXTURE_MM_PER_PX, FIXTURE_WRIST_PAIR, synth_fixture, training_shapes
from landmark_gate.shapestats import delaunay_topology, fit_stats

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")
_results: dict[int, list] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or report.outcome != "passed":
        entry = _results.setdefault(int(m.group(1)), [m.group(2), True])
        entry[1] = entry[1] and report.outcome == "passed"


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_results):
        name, ok = _results[k]
        terminalreporter.write_line(f"criterion {k:2d} {name}: {'PASS' if ok else 'FAIL'}")


@pytest.fixture(scope="session")
def fixture_training():
    """Training shapes (wrist-normalized mm) from a clean synthetic fixture."""
    train = synth_fixture(100, "none", seed=1)
    return training_shapes(train.annotations, FIXTURE_MM_PER_PX, NormalizationSpec(*FIXTURE_WRIST_PAIR))


@pytest.fixture(scope="session")
def fixture_stats(fixture_training):
    means = np.mean([s.points for s in fixture_training], axis=0)
    return fit_stats(fixture_training, delaunay_topology(means))
