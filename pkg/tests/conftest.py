from fractions import Fraction

import numpy as np
import pytest

from sqlearn import _backend


@pytest.fixture(params=sorted(_backend.available_backends()))
def kernels(request):
    """Every kernel module that imports here (compiled and/or numpy)."""
    return _backend.available_backends()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def exact_level(p):
    # levels in tests are short decimals; read them as the decimal intended
    return Fraction(repr(float(p)))


def exact_quantile(u, p):
    """Sort-based p-quantile with rational CDF comparisons."""
    s = sorted(float(v) for v in u)
    n = len(s)
    level = max(exact_level(p), Fraction(1, n))
    for i, v in enumerate(s):
        if Fraction(i + 1, n) >= level:
            return v
    raise AssertionError("unreachable")


def exact_superquantile(u, p):
    """(1/(1-p)) * integral over [p, 1] of the quantile function, in rationals."""
    s = sorted(float(v) for v in u)
    n = len(s)
    lo = exact_level(p)
    total = Fraction(0)
    for i, v in enumerate(s):
        a, b = max(Fraction(i, n), lo), Fraction(i + 1, n)
        if b > a:
            total += (b - a) * Fraction(v)
    return total / (1 - lo)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
