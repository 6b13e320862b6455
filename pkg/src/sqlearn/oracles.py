"""First-order oracles for superquantile learning objectives.

Three objectives share one output type:

* ``erm_oracle``: mean loss, the risk-neutral baseline;
* ``superquantile_subgradient``: exact superquantile value and one element
  of its subdifferential (convex losses);
* ``smoothed_oracle``: the Euclidean-smoothed superquantile
  ``f_mu(w) = max_q sum_i q_i L^i(w) - (mu/2) sum_i (q_i - 1/n)^2`` over the
  capped simplex ``{q in simplex, q_i <= 1/(n(1-p))}``, and its gradient.

The ridge term always sits outside the superquantile.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .losses import Dataset, LossKind, loss_from_margin, margins, ridge_term, weighted_gradient
from .tail_measures import as_loss_vector, check_level, quantile_rank


@dataclass(frozen=True)
class DualWeights:
    q: np.ndarray
    lambda_star: float
    support: np.ndarray


@dataclass(frozen=True)
class OracleOutput:
    value: float
    gradient: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __iter__(self):
        # lets optimizers and user code unpack ``f, g = oracle(w)``
        yield self.value
        yield self.gradient


def _tail_cap(n: int, p: float) -> float:
    return 1.0 / (n * (1.0 - p))


def erm_oracle(kind, w, D: Dataset, lam: float = 0.0) -> OracleOutput:
    kind = LossKind.parse(kind)
    w = np.asarray(w, dtype=np.float64)
    z = margins(w, D)
    losses = loss_from_margin(kind, z, D.targets)
    n = D.n
    rows = np.arange(n)
    grad = weighted_gradient(kind, z, D, rows, np.full(n, 1.0 / n))
    rv, rg = ridge_term(w, lam, D.has_intercept)
    return OracleOutput(float(np.mean(losses)) + rv, grad + rg,
                        {"support_size": n})


def superquantile_subgradient(kind, w, D: Dataset, p: float, lam: float = 0.0) -> OracleOutput:
    """Exact superquantile value and a subgradient.

    Datapoints strictly above the quantile get weight ``1/(n(1-p))``; the
    leftover tail mass ``delta/(1-p)`` is spread uniformly over the points
    tied with the quantile, which picks one element of the convex hull.
    """
    kind = LossKind.parse(kind)
    p = check_level(p)
    w = np.asarray(w, dtype=np.float64)
    z = margins(w, D)
    u = as_loss_vector(loss_from_margin(kind, z, D.targets))
    n = u.shape[0]
    t = _backend.kth_smallest(u, quantile_rank(n, p))
    s, n_above, n_equal = _backend.tail_sums(u, t)
    delta = max((n - n_above) / n - p, 0.0)
    value = s / (n * (1.0 - p)) + delta / (1.0 - p) * t

    above = np.flatnonzero(u > t)
    equal = np.flatnonzero(u == t)
    rows = np.concatenate((above, equal))
    weights = np.concatenate((
        np.full(above.shape[0], _tail_cap(n, p)),
        np.full(equal.shape[0], delta / ((1.0 - p) * n_equal)),
    ))
    order = np.argsort(rows, kind="stable")
    grad = weighted_gradient(kind, z, D, rows[order], weights[order])
    rv, rg = ridge_term(w, lam, D.has_intercept)
    return OracleOutput(value + rv, grad + rg, {
        "quantile": t,
        "delta": delta,
        "support_size": int(above.shape[0] + (equal.shape[0] if delta > 0 else 0)),
    })


def smoothed_dual_weights(u, p: float, mu: float) -> DualWeights:
    """Maximizer of the smoothed inner problem over the capped simplex.

    Breakpoint search on the derivative of the dual function: the
    constraint ``sum q = 1`` is dualized with multiplier ``lambda``; each
    ``q_i`` is then a clipped affine function of ``lambda`` with kinks at
    ``u_i + mu/n`` and ``u_i + mu/n - mu * cap``. The root of the piecewise
    affine, non-decreasing derivative is found by sorting the kinks and
    interpolating across the bracketing pair.
    """
    u = as_loss_vector(u)
    p = check_level(p)
    mu = float(mu)
    if not mu > 0.0:
        raise ValueError("smoothing parameter mu must be positive")
    n = u.shape[0]
    if p == 0.0 or n == 1:
        # the cap 1/n makes the uniform vector the only feasible point
        q = np.full(n, 1.0 / n)
        lam = float(np.min(u))
    else:
        cap = _tail_cap(n, p)
        q, lam = _backend.capped_simplex_weights(u, cap, mu)
        q = np.clip(q, 0.0, cap)
        # (u_i - lambda) / mu cancels badly when |u| >> mu; Newton steps on
        # the active affine piece move the residual mass onto the free weights
        for _ in range(8):
            residual = 1.0 - math.fsum(q)
            free = (q > 0.0) & (q < cap)
            if abs(residual) <= 1e-15 or not free.any():
                break
            shift = residual / np.count_nonzero(free)
            q[free] = np.clip(q[free] + shift, 0.0, cap)
            lam -= mu * shift
    return DualWeights(q=q, lambda_star=float(lam), support=np.flatnonzero(q))


def smoothed_oracle(kind, w, D: Dataset, p: float, mu: float, lam: float = 0.0) -> OracleOutput:
    kind = LossKind.parse(kind)
    w = np.asarray(w, dtype=np.float64)
    z = margins(w, D)
    u = loss_from_margin(kind, z, D.targets)
    dual = smoothed_dual_weights(u, p, mu)
    n = u.shape[0]
    rows = dual.support
    qs = dual.q[rows]
    dev = dual.q - 1.0 / n
    value = float(qs @ u[rows]) - 0.5 * mu * float(dev @ dev)
    grad = weighted_gradient(kind, z, D, rows, qs)
    rv, rg = ridge_term(w, lam, D.has_intercept)
    return OracleOutput(value + rv, grad + rg, {
        "lambda_star": dual.lambda_star,
        "support_size": int(rows.shape[0]),
    })


def minibatch_oracle(kind, w, D: Dataset, batch_indices, p: float, mu: float | None,
                     lam: float = 0.0) -> OracleOutput:
    """Superquantile oracle on the sub-sample ``batch_indices``.

    A biased estimate of the full objective: the cap becomes
    ``1/(|batch|(1-p))``. ``mu=None`` selects the exact subgradient oracle.
    """
    batch = np.asarray(batch_indices, dtype=np.intp).reshape(-1)
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    if np.any(batch < 0) or np.any(batch >= D.n):
        raise ValueError("batch index out of range")
    if batch.shape[0] * (1.0 - p) < 1.0 - 1e-9:
        warnings.warn(
            f"batch of {batch.shape[0]} holds fewer than one tail point at p={p}",
            RuntimeWarning, stacklevel=2)
    sub = D.subset(batch)
    if mu is None:
        return superquantile_subgradient(kind, w, sub, p, lam)
    return smoothed_oracle(kind, w, sub, p, mu, lam)


def _project_capped_simplex(z: np.ndarray, cap: float, tol: float = 1e-15) -> np.ndarray:
    """Euclidean projection onto {q : sum q = 1, 0 <= q <= cap} by bisection."""
    lo = float(np.min(z)) - cap
    hi = float(np.max(z))
    # sum(clip(z - tau, 0, cap)) decreases from n*cap >= 1 at lo to 0 at hi
    for _ in range(200):
        tau = 0.5 * (lo + hi)
        if np.clip(z - tau, 0.0, cap).sum() > 1.0:
            lo = tau
        else:
            hi = tau
        if hi - lo <= tol * max(1.0, abs(tau)):
            break
    return np.clip(z - 0.5 * (lo + hi), 0.0, cap)


def dual_bruteforce_oracle(u, p: float, mu: float, max_iter: int = 1_000_000,
                           tol: float = 1e-10) -> DualWeights:
    """Reference solver for :func:`smoothed_dual_weights` (testing only).

    Projected gradient ascent with diminishing steps on the concave
    quadratic, each projection computed by bisection on the shift. Stops
    when the projected-gradient fixed-point residual drops below ``tol``.
    """
    u = as_loss_vector(u)
    p = check_level(p)
    n = u.shape[0]
    if n > 50:
        raise ValueError("brute-force dual solver is limited to n <= 50")
    if not mu > 0.0:
        raise ValueError("smoothing parameter mu must be positive")
    cap = _tail_cap(n, p)
    q = np.full(n, 1.0 / n)
    for k in range(max_iter):
        grad = u - mu * (q - 1.0 / n)
        residual = np.max(np.abs(q - _project_capped_simplex(q + grad / mu, cap)))
        if residual < tol:
            break
        step = (0.5 + 0.4 / (k + 1)) / mu
        q = _project_capped_simplex(q + step * grad, cap)
    else:
        raise RuntimeError("projected gradient ascent did not converge")
    # recover the multiplier from any coordinate strictly inside (0, cap)
    shifted = u + mu / n
    inner = (q > 1e-12) & (q < cap - 1e-12)
    lam = float(np.mean(shifted[inner] - mu * q[inner])) if inner.any() else float("nan")
    return DualWeights(q=q, lambda_star=lam, support=np.flatnonzero(q))


class Objective:
    """Bundles an objective choice with its data, callable as ``oracle(w)``.

    ``mode`` is ``"erm"``, ``"superquantile"`` (exact subgradient oracle) or
    ``"smoothed"``.
    """

    MODES = ("erm", "superquantile", "smoothed")

    def __init__(self, kind, D: Dataset, mode: str = "smoothed", p: float = 0.0,
                 mu: float | None = None, lam: float = 0.0):
        if mode not in self.MODES:
            raise ValueError(f"unknown objective mode {mode!r}")
        if mode == "smoothed" and (mu is None or not mu > 0):
            raise ValueError("smoothed objective needs mu > 0")
        if mode != "erm":
            check_level(p)
        self.kind = LossKind.parse(kind)
        self.D = D
        self.mode = mode
        self.p = float(p)
        self.mu = mu
        self.lam = float(lam)

    def __call__(self, w) -> OracleOutput:
        if self.mode == "erm":
            return erm_oracle(self.kind, w, self.D, self.lam)
        if self.mode == "superquantile":
            return superquantile_subgradient(self.kind, w, self.D, self.p, self.lam)
        return smoothed_oracle(self.kind, w, self.D, self.p, self.mu, self.lam)

    def restrict(self, batch_indices) -> "Objective":
        """Same objective on a sub-sample (indices are sorted first)."""
        batch = np.sort(np.asarray(batch_indices, dtype=np.intp))
        if batch.shape[0] == 0:
            raise ValueError("empty batch")
        if self.mode != "erm" and batch.shape[0] * (1.0 - self.p) < 1.0 - 1e-9:
            warnings.warn(
                f"batch of {batch.shape[0]} holds fewer than one tail point at p={self.p}",
                RuntimeWarning, stacklevel=2)
        if batch.shape[0] == self.D.n and np.array_equal(batch, np.arange(self.D.n)):
            return self
        return Objective(self.kind, self.D.subset(batch), self.mode, self.p, self.mu, self.lam)
