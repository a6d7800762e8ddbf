import numpy as np
import pytest
from scipy import stats


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def double(mags, rng):
    """Attach random signs to magnitudes."""
    return mags * rng.choice(np.array([-1.0, 1.0]), mags.size)


def draw_law(law, size, rng, shape=None):
    """Symmetric samples whose magnitudes follow the named law with unit scale."""
    if law == "laplace":
        return rng.laplace(0.0, 1.0, size)
    if law == "gamma":
        return double(rng.gamma(0.8 if shape is None else shape, 1.0, size), rng)
    if law == "gpd":
        c = 0.2 if shape is None else shape
        return double(stats.genpareto.rvs(c, size=size, random_state=rng), rng)
    if law == "gaussian":
        return rng.standard_normal(size)
    raise ValueError(law)


# criterion number -> (passed, detail); filled by test_acceptance, printed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
