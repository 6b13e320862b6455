"""Quantiles and superquantiles of discrete, equi-probable loss distributions.

The quantile convention is the left-continuous inverse of the empirical
CDF, with level 0 mapped to the minimum::

    Q_p(u) = smallest u_i with #{j : u_j <= u_i} / n >= max(p, 1/n)

so the CDF gap ``delta = F(Q_p) - p`` is never negative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend

_EPS = np.finfo(np.float64).eps


def as_loss_vector(u) -> np.ndarray:
    """Validate ``u`` as a LossVector and return it as a float64 array."""
    arr = np.ascontiguousarray(u, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("loss vector must be one-dimensional")
    if arr.shape[0] == 0:
        raise ValueError("empty distribution")
    if not np.all(np.isfinite(arr)):
        raise ValueError("loss vector contains non-finite values")
    return arr


def check_level(p: float) -> float:
    p = float(p)
    if not (0.0 <= p < 1.0):
        raise ValueError(f"invalid tail level {p!r}: need 0 <= p < 1")
    return p


def quantile_rank(n: int, p: float) -> int:
    """1-based rank of the order statistic holding the p-quantile of n atoms."""
    # Smallest k with k/n >= p. The few-ulp slack absorbs products such as
    # 0.7 * 10 = 7.000000000000001 that should land exactly on an atom.
    target = p * n
    k = math.ceil(target - 4.0 * _EPS * max(1.0, target))
    return min(max(k, 1), n)


def quantile(u, p: float) -> float:
    """Empirical p-quantile by selection (no full sort).

    >>> quantile([1.0, 2.0, 3.0, 4.0], 0.6)
    3.0
    """
    u = as_loss_vector(u)
    p = check_level(p)
    return _backend.kth_smallest(u, quantile_rank(u.shape[0], p))


@dataclass(frozen=True)
class TailSplit:
    """Partition of the atoms at and above the quantile.

    ``above`` and ``equal`` hold sorted indices of ``u_i > quantile`` and
    ``u_i == quantile``; ``delta`` is the probability mass of the quantile
    atom that still belongs to the tail.
    """

    quantile: float
    above: np.ndarray
    equal: np.ndarray
    delta: float


def _delta(n: int, n_above: int, p: float) -> float:
    # clamp the rounding residue of (n - |I>|)/n - p at a CDF jump
    return max((n - n_above) / n - p, 0.0)


def tail_split(u, p: float) -> TailSplit:
    u = as_loss_vector(u)
    p = check_level(p)
    n = u.shape[0]
    t = _backend.kth_smallest(u, quantile_rank(n, p))
    above = np.flatnonzero(u > t)
    equal = np.flatnonzero(u == t)
    return TailSplit(quantile=t, above=above, equal=equal,
                     delta=_delta(n, above.shape[0], p))


def superquantile(u, p: float) -> float:
    """Superquantile (CVaR) of the empirical distribution of ``u`` at level p.

    Three passes: select the quantile, sum the atoms strictly above it in
    index order, and add the fractional mass ``delta`` sitting on the
    quantile itself.
    """
    u = as_loss_vector(u)
    p = check_level(p)
    n = u.shape[0]
    t = _backend.kth_smallest(u, quantile_rank(n, p))
    s, n_above, _ = _backend.tail_sums(u, t)
    delta = _delta(n, n_above, p)
    return s / (n * (1.0 - p)) + delta / (1.0 - p) * t


def superquantile_integral_oracle(u, p: float) -> float:
    """Reference superquantile: integrate the sorted quantile function over [p, 1].

    The quantile function equals the k-th smallest atom on ((k-1)/n, k/n];
    each piece contributes its overlap with [p, 1]. Test oracle, O(n log n).
    """
    u = as_loss_vector(u)
    p = check_level(p)
    n = u.shape[0]
    srt = np.sort(u)
    terms = []
    for k in range(1, n + 1):
        lo = max((k - 1) / n, p)
        hi = k / n
        if hi > lo:
            terms.append(srt[k - 1] * (hi - lo))
    return math.fsum(terms) / (1.0 - p)
