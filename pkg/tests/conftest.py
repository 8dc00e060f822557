import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repo", max_examples=40, deadline=None)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class GaussianFlow:
    """Exact marginal velocity of the independent-coupling path from N(0, I) to N(m, s^2 I).

    p_t = N(t m, sig_t^2 I) with sig_t^2 = (1 - t)^2 + t^2 s^2, so the field is
    known in closed form and so is the score.
    """

    def __init__(self, m, s):
        self.m = np.atleast_1d(np.asarray(m, float))
        self.s = float(s)
        self.dim = self.m.size

    def var(self, t):
        return (1 - t) ** 2 + t**2 * self.s**2

    def velocity(self, x, t):
        x = np.atleast_2d(x)
        dvar = -2 * (1 - t) + 2 * t * self.s**2
        return self.m + 0.5 * dvar / self.var(t) * (x - t * self.m)

    def score(self, x, t):
        return -(np.atleast_2d(x) - t * self.m) / self.var(t)

    __call__ = velocity


@pytest.fixture
def gaussian_flow():
    return GaussianFlow


# -- acceptance lines ---------------------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, passed, detail)`` records one PASS/FAIL line and fails the test when ``passed`` is false."""

    def record(n, passed, detail):
        line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
