import numpy as np
import pytest
from hypothesis import strategies as st

from gmmsteer import GmmDistribution


def random_spd(rng, n, scale=1.0):
    G = rng.normal(size=(n, n))
    return scale * (G @ G.T / n + 0.1 * np.eye(n))


def random_gmm(rng, n=None, count=None, spread=3.0):
    n = n or int(rng.integers(1, 7))
    count = count or int(rng.integers(1, 6))
    w = rng.dirichlet(np.ones(count))
    w = np.maximum(w, 1e-3)
    w /= w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    means = rng.normal(scale=spread, size=(count, n))
    covs = [random_spd(rng, n, rng.uniform(0.1, 2.0)) for _ in range(count)]
    return GmmDistribution.from_arrays(w, means, covs)


@st.composite
def gmms(draw, max_dim=6, max_components=5):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(1, max_dim))
    count = draw(st.integers(1, max_components))
    return random_gmm(np.random.default_rng(seed), n, count)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one summary line per acceptance criterion, printed after the run
_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    failed = report.failed
    prev = _acceptance.get(key)
    if report.when == "call" or failed or prev is None:
        if prev is None or failed or prev[0] != "FAIL":
            _acceptance[key] = ("FAIL" if failed else "PASS", props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_acceptance, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        status, detail = _acceptance[key]
        terminalreporter.write_line(f"criterion {key:<3} {status}  {detail}")
