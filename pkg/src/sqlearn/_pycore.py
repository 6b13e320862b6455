"""Pure-Python (numpy) twins of the kernels in ``_core.pyx``.

Used when the compiled extension is unavailable or when
``SQLEARN_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

import numpy as np


def kth_smallest(u, k: int) -> float:
    """Return the k-th order statistic of ``u`` (1-based); ``u`` is untouched."""
    u = np.asarray(u, dtype=np.float64)
    n = u.shape[0]
    if k < 1 or k > n:
        raise ValueError("order statistic index out of range")
    # np.partition is introselect on a copy
    return float(np.partition(u, k - 1)[k - 1])


def tail_sums(u, t: float) -> tuple[float, int, int]:
    """Sum of entries strictly above ``t`` and the counts above / equal to it."""
    u = np.asarray(u, dtype=np.float64)
    above = u > t
    s = 0.0
    # sequential accumulation, matching the compiled kernel bit for bit
    for v in u[above].tolist():
        s += v
    return s, int(above.sum()), int((u == t).sum())


def _dtheta(shifted: np.ndarray, lam: float, mu: float, cap: float) -> float:
    c = np.clip((shifted - lam) / mu, 0.0, cap)
    total = 0.0
    for v in c.tolist():
        total += v
    return 1.0 - total


def capped_simplex_weights(u, cap: float, mu: float) -> tuple[np.ndarray, float]:
    """Maximize ``q @ u - mu/2 * ||q - 1/n||^2`` over the capped simplex.

    Vectorized breakpoint search: the dual derivative is evaluated at all
    ``2n`` sorted breakpoints at once through prefix sums, then the
    bracketing pair is re-evaluated term by term before interpolating.
    """
    u = np.asarray(u, dtype=np.float64)
    n = u.shape[0]
    width = mu * cap
    shifted = u + mu / n
    upper = np.sort(shifted)
    lower = upper - width
    prefix = np.concatenate(([0.0], np.cumsum(upper)))
    points = np.sort(np.concatenate((lower, upper)))

    n_low = np.searchsorted(lower, points, side="right")
    n_up = np.searchsorted(upper, points, side="left")
    block = prefix[n_low] - prefix[n_up] - points * (n_low - n_up)
    dt = 1.0 - cap * (n - n_low) - block / mu

    positive = np.flatnonzero(dt > 0.0)
    m = points.shape[0]
    k = int(positive[0]) if positive.size else m
    if k == m:
        lam = float(points[-1])
    elif k == 0:
        lam = float(points[0])
    else:
        ta = _dtheta(shifted, points[k - 1], mu, cap)
        tb = _dtheta(shifted, points[k], mu, cap)
        while ta > 0.0 and k > 1:
            k -= 1
            tb = ta
            ta = _dtheta(shifted, points[k - 1], mu, cap)
        while tb <= 0.0 and k < m - 1:
            k += 1
            ta = tb
            tb = _dtheta(shifted, points[k], mu, cap)
        a = float(points[k - 1])
        b = float(points[k])
        lam = a if tb == ta else a - ta * (b - a) / (tb - ta)

    q = np.where(
        lam < shifted - width,
        cap,
        np.where(lam < shifted, (shifted - lam) / mu, 0.0),
    )
    return q, lam
