import numpy as np
import pytest

from labeltrick import Graph, LabelMatrix, closed_form_operator
from labeltrick._rng import make_rng

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker
    ok = report.passed and _ACCEPTANCE.get(number, (True,))[0]
    _ACCEPTANCE[number] = (ok, title)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, title = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")


def random_graph(n, p, seed):
    rng = make_rng(seed, 99)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    return Graph(n, np.stack([iu[keep], ju[keep]], axis=1))


def random_problem(seed, n=10, m=6, c=3, d=2, p=0.4, lam=0.6):
    """A small dense problem: operator, features, labels."""
    rng = make_rng(seed, 98)
    op = closed_form_operator(random_graph(n, p, seed).normalized_adjacency, lam)
    x = rng.standard_normal((n, d)) if d else None
    train = rng.choice(n, size=m, replace=False)
    labels = LabelMatrix.from_classes(rng.integers(0, c, size=n), train, c)
    return op, x, labels, rng


@pytest.fixture
def path_graph():
    return Graph(4, [(0, 1), (1, 2), (2, 3)])


@pytest.fixture
def small_problem():
    return random_problem(0)
