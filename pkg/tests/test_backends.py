import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sqlearn import _backend, _pycore

HAS_CORE = "cython" in _backend.available_backends()
needs_core = pytest.mark.skipif(not HAS_CORE, reason="compiled extension not built")

vectors = arrays(np.float64, st.integers(1, 80),
                 elements=st.one_of(st.integers(-5, 5).map(float), st.floats(-1e6, 1e6)))


@needs_core
@settings(max_examples=200)
@given(vectors, st.data())
def test_kth_smallest_agrees(u, data):
    from sqlearn import _core
    k = data.draw(st.integers(1, u.size))
    ref = np.sort(u)[k - 1]
    assert _core.kth_smallest(u, k) == ref == _pycore.kth_smallest(u, k)


@needs_core
@settings(max_examples=200)
@given(vectors, st.data())
def test_tail_sums_agree(u, data):
    from sqlearn import _core
    t = data.draw(st.sampled_from(sorted(set(u.tolist()))))
    s1, a1, e1 = _core.tail_sums(u, t)
    s0, a0, e0 = _pycore.tail_sums(u, t)
    assert (a1, e1) == (a0, e0) == (int(np.sum(u > t)), int(np.sum(u == t)))
    assert s1 == pytest.approx(s0, rel=1e-12, abs=1e-6)


@needs_core
@settings(max_examples=200)
@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(-100, 100)),
       st.floats(0.0, 0.95), st.floats(1e-3, 1e3))
def test_capped_simplex_agree(u, p, mu):
    from sqlearn import _core
    cap = 1.0 / (u.size * (1.0 - p))
    q1, l1 = _core.capped_simplex_weights(u, cap, mu)
    q0, l0 = _pycore.capped_simplex_weights(u, cap, mu)
    np.testing.assert_allclose(np.asarray(q1), np.asarray(q0), atol=1e-9)
    assert abs(l1 - l0) <= 1e-7 * max(1.0, abs(l0), mu)


def test_kth_smallest_does_not_mutate():
    u = np.array([3.0, 1.0, 2.0])
    for impl in _backend.available_backends().values():
        impl.kth_smallest(u, 2)
        np.testing.assert_array_equal(u, [3.0, 1.0, 2.0])


def test_pure_python_switch():
    env = dict(os.environ, SQLEARN_PURE_PYTHON="1")
    code = ("from sqlearn import _backend, tail_measures as tm;"
            "print(_backend.BACKEND, tm.superquantile([1, 2, 3, 4], 0.5))")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True).stdout.split()
    assert out == ["python", "3.5"]


@needs_core
def test_compiled_is_default():
    if os.environ.get("SQLEARN_PURE_PYTHON", "") in ("", "0"):
        assert _backend.BACKEND == "cython"


@needs_core
@pytest.mark.parametrize("n", [2047, 2048, 2049, 50_000])
def test_kth_smallest_either_side_of_cutoff(n):
    from sqlearn import _core
    u = np.random.default_rng(n).integers(0, 50, n).astype(float)
    for k in (1, n // 3, n):
        assert _core.kth_smallest(u, k) == np.sort(u)[k - 1]
