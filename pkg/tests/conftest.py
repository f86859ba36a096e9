import numpy as np
import pytest

from clusterlogit import Dataset

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = report.user_properties and dict(report.user_properties).get("criterion")
    if not marker:
        return
    n, title = marker
    prev = _criteria.get(n, (title, "PASS"))[1]
    status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
    if prev == "FAIL" or (prev == "SKIP" and status == "PASS"):
        status = prev
    _criteria[n] = (title, status)


@pytest.fixture(autouse=True)
def _record_criterion(request):
    m = request.node.get_closest_marker("criterion")
    if m is not None:
        request.node.user_properties.append(("criterion", tuple(m.args)))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, status = _criteria[n]
        terminalreporter.write_line(f"[{status}] criterion {n}: {title}")


def make_clustered(seed, G=8, per=(20, 60), k=3, beta=None, phi=0.3, names=None):
    """Small clustered logit dataset with a constant and k-1 normal regressors."""
    rng = np.random.default_rng(seed)
    sizes = rng.integers(per[0], per[1] + 1, size=G)
    groups = np.repeat(np.arange(G), sizes)
    n = groups.size
    X = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1)) + rng.normal(size=(G, k - 1))[groups]])
    beta = np.r_[0.2, np.linspace(0.5, -0.5, k - 1)] if beta is None else np.asarray(beta)
    common = rng.uniform(size=G)[groups]
    u = np.where(rng.uniform(size=n) < phi, common, rng.uniform(size=n))
    y = (1 / (1 + np.exp(-X @ beta)) > u).astype(float)
    return Dataset.from_arrays(y, X, groups, names=names or tuple(f"x{j}" for j in range(k)))


@pytest.fixture
def clustered():
    return make_clustered(0)
