# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled kernels for order statistics and the capped-simplex dual search.

Every function here has a drop-in twin in :mod:`sqlearn._pycore`; the two
must agree to rounding.
"""
import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy
from libcpp.algorithm cimport nth_element, sort as cpp_sort

cnp.import_array()

cdef Py_ssize_t _SIMD_SELECT_MIN = 2048


def kth_smallest(const double[::1] u, Py_ssize_t k):
    """Return the k-th order statistic of ``u`` (1-based); ``u`` is untouched."""
    cdef Py_ssize_t n = u.shape[0]
    if k < 1 or k > n:
        raise ValueError("order statistic index out of range")
    if n > _SIMD_SELECT_MIN:
        # numpy's vectorized partition outruns nth_element on long inputs
        return float(np.partition(np.asarray(u), k - 1)[k - 1])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scratch = np.empty(n, dtype=np.float64)
    cdef double* buf = <double*> scratch.data
    cdef double out
    with nogil:
        memcpy(buf, &u[0], n * sizeof(double))
        nth_element(buf, buf + (k - 1), buf + n)
        out = buf[k - 1]
    return out


def tail_sums(const double[::1] u, double t):
    """Sum of entries strictly above ``t`` and the counts above / equal to it.

    Accumulates in ascending index order.
    """
    cdef Py_ssize_t i, n = u.shape[0]
    cdef double s = 0.0
    cdef Py_ssize_t n_above = 0, n_equal = 0
    with nogil:
        for i in range(n):
            if u[i] > t:
                s += u[i]
                n_above += 1
            elif u[i] == t:
                n_equal += 1
    return s, n_above, n_equal


cdef double _dtheta(const double[::1] shifted, double lam, double mu,
                    double cap) noexcept nogil:
    # derivative of the dual function, evaluated term by term
    cdef Py_ssize_t i
    cdef double c, total = 0.0
    for i in range(shifted.shape[0]):
        c = (shifted[i] - lam) / mu
        if c > cap:
            c = cap
        elif c < 0.0:
            c = 0.0
        total += c
    return 1.0 - total


def capped_simplex_weights(const double[::1] u, double cap, double mu):
    """Maximize ``q @ u - mu/2 * ||q - 1/n||^2`` over the capped simplex.

    Requires ``n * cap > 1``. Returns ``(q, lam)`` where ``lam`` is the
    multiplier of the sum-to-one constraint.
    """
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t i, j, m = 2 * n
    cdef double width = mu * cap
    cdef double shift = mu / n
    cdef cnp.ndarray[cnp.float64_t, ndim=1] shifted_arr = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] upper_arr = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] points_arr = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] prefix_arr = np.empty(n + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] q_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] shifted = shifted_arr
    cdef double* upper = <double*> upper_arr.data
    cdef double* points = <double*> points_arr.data
    cdef double* prefix = <double*> prefix_arr.data
    cdef double[::1] q = q_arr
    cdef Py_ssize_t n_low, n_up, k, il, iu
    cdef double s, block, dt, a, b, ta, tb, lam

    with nogil:
        for i in range(n):
            shifted[i] = u[i] + shift
            upper[i] = shifted[i]
        cpp_sort(upper, upper + n)
        prefix[0] = 0.0
        for i in range(n):
            prefix[i + 1] = prefix[i] + upper[i]
        # both breakpoint families are already sorted: merge them
        il = 0
        iu = 0
        for j in range(m):
            if iu == n or (il < n and upper[il] - width <= upper[iu]):
                points[j] = upper[il] - width
                il += 1
            else:
                points[j] = upper[iu]
                iu += 1

        # Sweep breakpoints in increasing order. With upper[] sorted, the
        # lower breakpoints upper[i] - width are sorted too, so the indices
        # active at s form the block [n_up, n_low) of the sorted order.
        n_low = 0
        n_up = 0
        k = m
        for j in range(m):
            s = points[j]
            while n_low < n and upper[n_low] - width <= s:
                n_low += 1
            while n_up < n and upper[n_up] < s:
                n_up += 1
            block = prefix[n_low] - prefix[n_up] - s * (n_low - n_up)
            dt = 1.0 - cap * (n - n_low) - block / mu
            if dt > 0.0:
                k = j
                break

        if k == m:
            # unreachable in exact arithmetic: the top breakpoint has dtheta = 1
            lam = points[m - 1]
        elif k == 0:
            lam = points[0]
        else:
            ta = _dtheta(shifted, points[k - 1], mu, cap)
            tb = _dtheta(shifted, points[k], mu, cap)
            # prefix-sum rounding can misplace the bracket by a breakpoint
            while ta > 0.0 and k > 1:
                k -= 1
                tb = ta
                ta = _dtheta(shifted, points[k - 1], mu, cap)
            while tb <= 0.0 and k < m - 1:
                k += 1
                ta = tb
                tb = _dtheta(shifted, points[k], mu, cap)
            a = points[k - 1]
            b = points[k]
            if tb == ta:
                lam = a
            else:
                lam = a - ta * (b - a) / (tb - ta)

        for i in range(n):
            if lam < shifted[i] - width:
                q[i] = cap
            elif lam < shifted[i]:
                q[i] = (shifted[i] - lam) / mu
            else:
                q[i] = 0.0
    return q_arr, lam
