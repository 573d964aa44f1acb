import os

# more native threads than cores so the chunked parallel paths really run threaded
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np
import pytest

from featmf import FactorModel, Hyperparameters, ObservationSet, from_triplets, identity_features
from featmf.synthetic import SyntheticSpec, generate


def tiny_problem(alpha=0.0, lam=0.0):
    """One query with a single feature, two targets with V = [1, 2], labels [1, 1], P = 0."""
    X = from_triplets([(0, 0, 1.0)], 1, 1)
    Z = identity_features(2)
    obs = ObservationSet.from_triplets([(0, 0, 1.0), (0, 1, 1.0)], 1, 2)
    model = FactorModel(np.zeros((1, 1)), np.array([[1.0, 2.0]]), Hyperparameters(alpha, lam, 1), "square")
    return model, X, Z, obs


@pytest.fixture
def tiny():
    return tiny_problem()


@pytest.fixture(scope="session")
def small_square():
    return generate(SyntheticSpec(q=30, p=30, n=40, m=40, nnz=4, n_obs=300, loss="square", noise=0.1, seed=1))


@pytest.fixture(scope="session")
def small_logistic():
    return generate(SyntheticSpec(q=30, p=30, n=40, m=40, nnz=4, n_obs=300, loss="logistic", seed=2))


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or report.outcome != "passed":
        n, title = crit
        detail = dict(report.user_properties).get("measured", "")
        if report.skipped:
            detail = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
        _CRITERIA[n] = (title, report.outcome.upper(), detail)


def pytest_runtest_setup(item):
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        item.user_properties.append(("criterion", tuple(marker.args)))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, outcome, detail = _CRITERIA[n]
        status = {"PASSED": "PASS", "FAILED": "FAIL", "SKIPPED": "SKIP"}.get(outcome, outcome)
        terminalreporter.write_line(f"criterion {n:>2} {status}: {title}" + (f" [{detail}]" if detail else ""))
