import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from ritzlab.spectral import CosineSeries

settings.register_profile("ritzlab", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ritzlab")


def random_series(rng, dim, modes=5, max_freq=3, *, zero_mean=False, scale=1.0):
    coeffs = {}
    for _ in range(modes):
        k = tuple(int(v) for v in rng.integers(0, max_freq + 1, size=dim))
        if zero_mean and not any(k):
            continue
        coeffs[k] = coeffs.get(k, 0.0) + scale * float(rng.standard_normal())
    return CosineSeries(dim, coeffs)


@st.composite
def series(draw, dims=(1, 2, 3), max_freq=3, max_modes=5, zero_mean=False):
    dim = draw(st.sampled_from(dims))
    key = st.tuples(*[st.integers(0, max_freq)] * dim)
    coef = st.floats(-3, 3, allow_nan=False).filter(lambda v: abs(v) > 1e-3)
    coeffs = draw(st.dictionaries(key, coef, max_size=max_modes))
    if zero_mean:
        coeffs.pop((0,) * dim, None)
    return CosineSeries(dim, coeffs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
