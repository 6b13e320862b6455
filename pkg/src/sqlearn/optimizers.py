"""Batch and mini-batch first-order methods.

Every method consumes an *oracle*: a callable ``w -> (value, gradient)``.
:class:`~sqlearn.oracles.OracleOutput` unpacks that way, so any of the
objectives in :mod:`sqlearn.oracles` can be passed directly.
"""
from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

ALGORITHMS = ("subgradient", "dual_averaging", "gradient", "nesterov", "lbfgs", "sgd")

CONVERGED = "converged"
MAX_ITER = "max_iter"
LINE_SEARCH_FAILURE = "line_search_failure"


class OptimizationError(RuntimeError):
    """Raised when a run produces a non-finite objective."""


@dataclass
class OptimizerConfig:
    algorithm: str = "lbfgs"
    max_iter: int = 500
    step_size: float = 1.0
    momentum: float = 0.9
    decay_factor: float = 0.5
    decay_period: int = 10
    batch_size: int = 32
    lbfgs_memory: int = 10
    tolerance: float = 1e-6
    seed: int = 0
    # dual averaging scaling gamma; None means 1 / step_size
    dual_averaging_gamma: float | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if int(self.max_iter) < 0:
            raise ValueError("max_iter must be non-negative")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if not (0.0 < self.decay_factor <= 1.0):
            raise ValueError("decay_factor must lie in (0, 1]")
        if int(self.decay_period) < 1:
            raise ValueError("decay_period must be at least one epoch")
        if self.algorithm == "sgd" and int(self.batch_size) < 1:
            raise ValueError("sgd requires batch_size >= 1")
        if int(self.lbfgs_memory) < 1:
            raise ValueError("lbfgs_memory must be at least 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.dual_averaging_gamma is not None and not self.dual_averaging_gamma > 0:
            raise ValueError("dual_averaging_gamma must be positive")
        self.max_iter = int(self.max_iter)
        self.decay_period = int(self.decay_period)
        self.batch_size = int(self.batch_size)
        self.lbfgs_memory = int(self.lbfgs_memory)
        self.seed = int(self.seed)


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    weights: np.ndarray | None = None
    reason: str = MAX_ITER
    best_objective: float = math.inf
    averaged_weights: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        # record 0 is the starting point
        return self.records[-1]["iter"] if self.records else 0

    def objectives(self) -> np.ndarray:
        return np.array([r["objective"] for r in self.records])

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(self.objectives())

    def to_dict(self, with_timing: bool = True) -> dict:
        recs = self.records
        if not with_timing:
            recs = [{k: v for k, v in r.items() if k != "elapsed"} for r in recs]
        return {
            "reason": self.reason,
            "best_objective": self.best_objective,
            "iterations": self.iterations,
            "records": recs,
        }


class _Recorder:
    def __init__(self):
        self.trace = RunTrace()
        self._t0 = time.perf_counter()
        self.best_w = None

    def record(self, k, f, g, step, w):
        if not math.isfinite(f):
            raise OptimizationError(f"non-finite objective {f!r} at iteration {k}")
        self.trace.records.append({
            "iter": k,
            "objective": float(f),
            "grad_norm": float(np.linalg.norm(g)),
            "step_size": float(step),
            "elapsed": time.perf_counter() - self._t0,
        })
        if f < self.trace.best_objective or self.best_w is None:
            self.trace.best_objective = float(f)
            self.best_w = np.array(w, dtype=np.float64, copy=True)

    def finish(self, reason, w=None):
        self.trace.reason = reason
        self.trace.weights = self.best_w if w is None else np.array(w, dtype=np.float64)
        return self.trace.weights, self.trace


def _evaluate(oracle, w):
    f, g = oracle(w)
    return float(f), np.asarray(g, dtype=np.float64)


def _start(w0):
    return np.array(w0, dtype=np.float64, copy=True).reshape(-1)


def run_subgradient(oracle, w0, config: OptimizerConfig):
    """Subgradient method with steps ``step_size / sqrt(k + 1)``; returns the best iterate."""
    w = _start(w0)
    rec = _Recorder()
    for k in range(config.max_iter + 1):
        f, g = _evaluate(oracle, w)
        eta = config.step_size / math.sqrt(k + 1)
        rec.record(k, f, g, eta, w)
        if np.linalg.norm(g) <= config.tolerance:
            return rec.finish(CONVERGED, w)
        if k == config.max_iter:
            break
        w = w - eta * g
    return rec.finish(MAX_ITER)


def run_dual_averaging(oracle, w0, config: OptimizerConfig):
    """Simple dual averaging with the Euclidean prox-function centred at ``w0``.

    ``w_{k+1} = w0 - s_k / beta_k`` where ``s_k`` is the running sum of
    subgradients and ``beta_k = gamma * sqrt(k + 1)``. The best iterate is
    returned; the plain average of iterates is kept on the trace.
    """
    center = _start(w0)
    w = center.copy()
    gamma = config.dual_averaging_gamma or 1.0 / config.step_size
    s = np.zeros_like(w)
    avg = np.zeros_like(w)
    rec = _Recorder()
    for k in range(config.max_iter + 1):
        f, g = _evaluate(oracle, w)
        beta = gamma * math.sqrt(k + 1)
        rec.record(k, f, g, 1.0 / beta, w)
        avg += (w - avg) / (k + 1)
        if np.linalg.norm(g) <= config.tolerance:
            rec.trace.averaged_weights = avg
            return rec.finish(CONVERGED, w)
        if k == config.max_iter:
            break
        s += g
        w = center - s / beta
    rec.trace.averaged_weights = avg
    return rec.finish(MAX_ITER)


_DIVERGENCE_PATIENCE = 10


def run_gradient(oracle, w0, config: OptimizerConfig):
    """Fixed-step gradient descent; stops at ``||grad|| <= tolerance``."""
    w = _start(w0)
    rec = _Recorder()
    increases = 0
    f_prev = math.inf
    for k in range(config.max_iter + 1):
        f, g = _evaluate(oracle, w)
        rec.record(k, f, g, config.step_size, w)
        increases = increases + 1 if f > f_prev else 0
        if increases >= _DIVERGENCE_PATIENCE:
            return rec.finish(LINE_SEARCH_FAILURE)
        if np.linalg.norm(g) <= config.tolerance:
            return rec.finish(CONVERGED, w)
        if k == config.max_iter:
            break
        f_prev = f
        w = w - config.step_size * g
    return rec.finish(MAX_ITER, w)


def run_nesterov(oracle, w0, config: OptimizerConfig):
    """Accelerated gradient with function-value adaptive restart.

    Momentum is reset (``t = 1``) whenever the objective increases between
    consecutive iterates.
    """
    eta = config.step_size
    x = _start(w0)
    y = x.copy()
    t = 1.0
    rec = _Recorder()
    f_x, g_x = _evaluate(oracle, x)
    f_y, g_y = f_x, g_x
    increases = 0
    for k in range(config.max_iter + 1):
        rec.record(k, f_x, g_x, eta, x)
        if np.linalg.norm(g_x) <= config.tolerance:
            return rec.finish(CONVERGED, x)
        if increases >= _DIVERGENCE_PATIENCE:
            return rec.finish(LINE_SEARCH_FAILURE)
        if k == config.max_iter:
            break
        x_new = y - eta * g_y
        f_new, g_new = _evaluate(oracle, x_new)
        if f_new > f_x:
            increases += 1
            t = 1.0
            y = x_new
            f_y, g_y = f_new, g_new
        else:
            increases = 0
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_new
            t = t_new
            if beta == 0.0:
                y = x_new
                f_y, g_y = f_new, g_new
            else:
                y = x_new + beta * (x_new - x)
                f_y, g_y = _evaluate(oracle, y)
        x, f_x, g_x = x_new, f_new, g_new
    return rec.finish(MAX_ITER, x)


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic matching values and slopes at a and b, or None."""
    if a == b:
        return None
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    x = b - (b - a) * (db + d2 - d1) / denom
    return x if math.isfinite(x) else None


def strong_wolfe(oracle, x, f0, g0, d, alpha0=1.0, c1=1e-4, c2=0.9, max_evals=25):
    """Bracketing/zoom strong-Wolfe line search with cubic interpolation.

    Returns ``(alpha, f, g)`` on success and ``None`` when no acceptable
    step is found within ``max_evals`` function evaluations.
    """
    dphi0 = float(g0 @ d)
    if not dphi0 < 0:
        return None
    evals = 0

    def phi(alpha):
        nonlocal evals
        evals += 1
        f, g = _evaluate(oracle, x + alpha * d)
        return f, g, float(g @ d)

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        while evals < max_evals:
            width = hi - lo
            alpha = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            left, right = min(lo, hi), max(lo, hi)
            margin = 0.1 * abs(width)
            if alpha is None or not (left + margin <= alpha <= right - margin):
                alpha = 0.5 * (lo + hi)
            if abs(width) <= 1e-16 * max(1.0, abs(lo)):
                return None
            f, g, dphi = phi(alpha)
            if not math.isfinite(f) or f > f0 + c1 * alpha * dphi0 or f >= f_lo:
                hi, f_hi, d_hi = alpha, f, dphi
            else:
                if abs(dphi) <= -c2 * dphi0:
                    return alpha, f, g
                if dphi * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = alpha, f, dphi
        return None

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    alpha = alpha0
    first = True
    while evals < max_evals:
        f, g, dphi = phi(alpha)
        if not math.isfinite(f):
            # overshoot into overflow: back off toward the last good step
            alpha = 0.5 * (a_prev + alpha)
            continue
        if f > f0 + c1 * alpha * dphi0 or (not first and f >= f_prev):
            return zoom(a_prev, f_prev, d_prev, alpha, f, dphi)
        if abs(dphi) <= -c2 * dphi0:
            return alpha, f, g
        if dphi >= 0:
            return zoom(alpha, f, dphi, a_prev, f_prev, d_prev)
        # extrapolate, keeping the trial inside [1.1 * alpha, 10 * alpha]
        nxt = _cubic_min(a_prev, f_prev, d_prev, alpha, f, dphi)
        if nxt is None or not (1.1 * alpha <= nxt <= 10.0 * alpha):
            nxt = 4.0 * alpha
        a_prev, f_prev, d_prev = alpha, f, dphi
        alpha = nxt
        first = False
    return None


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def run_lbfgs(oracle, w0, config: OptimizerConfig):
    """Limited-memory BFGS with a strong-Wolfe line search (c1=1e-4, c2=0.9).

    Stops at ``||grad|| <= tolerance * max(1, ||w||)``. When the line search
    fails along both the quasi-Newton and the steepest-descent direction,
    the run ends with reason ``line_search_failure`` and returns the best
    iterate found.
    """
    w = _start(w0)
    pairs: deque = deque(maxlen=config.lbfgs_memory)
    rec = _Recorder()
    f, g = _evaluate(oracle, w)
    step = 0.0
    for k in range(config.max_iter + 1):
        rec.record(k, f, g, step, w)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= config.tolerance * max(1.0, float(np.linalg.norm(w))):
            return rec.finish(CONVERGED, w)
        if k == config.max_iter:
            break
        d = _two_loop(g, list(pairs))
        if not float(g @ d) < 0:
            pairs.clear()
            d = -g
        alpha0 = 1.0 if pairs else min(1.0, 1.0 / gnorm)
        found = strong_wolfe(oracle, w, f, g, d, alpha0)
        if found is None and pairs:
            pairs.clear()
            d = -g
            found = strong_wolfe(oracle, w, f, g, d, min(1.0, 1.0 / gnorm))
        if found is None:
            return rec.finish(LINE_SEARCH_FAILURE)
        step, f_new, g_new = found
        s = step * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            pairs.append((s, y, 1.0 / sy))
        w = w + s
        f, g = f_new, g_new
    return rec.finish(MAX_ITER)


def step_size_at(config: OptimizerConfig, epoch: int) -> float:
    """Step decay: ``step_size * decay_factor ** (epoch // decay_period)``."""
    return config.step_size * config.decay_factor ** (epoch // config.decay_period)


def run_sgd(oracle_factory, D, w0, config: OptimizerConfig):
    """Mini-batch SGD with heavy-ball momentum and step decay.

    ``oracle_factory(batch_indices)`` must return an oracle for the
    objective restricted to that batch; ``oracle_factory(all indices)`` is
    also used once per epoch to trace the full objective. ``max_iter``
    counts epochs.
    """
    n = D.n if hasattr(D, "n") else int(D)
    m = min(config.batch_size, n)
    rng = np.random.default_rng(config.seed)
    full = oracle_factory(np.arange(n))
    w = _start(w0)
    v = np.zeros_like(w)
    rec = _Recorder()
    for epoch in range(config.max_iter + 1):
        eta = step_size_at(config, epoch)
        f, g = _evaluate(full, w)
        rec.record(epoch, f, g, eta, w)
        if epoch == config.max_iter:
            break
        perm = rng.permutation(n)
        for start in range(0, n, m):
            batch = np.sort(perm[start:start + m])
            _, gb = _evaluate(oracle_factory(batch), w)
            v = config.momentum * v - eta * gb
            w = w + v
        if not np.all(np.isfinite(w)):
            raise OptimizationError(f"iterates diverged during epoch {epoch}")
    return rec.finish(MAX_ITER, w)


def optimize(objective, w0, config: OptimizerConfig, n: int | None = None):
    """Dispatch on ``config.algorithm``.

    For ``sgd`` the objective must provide ``restrict(batch_indices)``
    (as :class:`~sqlearn.oracles.Objective` does).
    """
    algo = config.algorithm
    if algo == "sgd":
        size = n if n is not None else objective.D.n
        return run_sgd(objective.restrict, size, w0, config)
    runner = {
        "subgradient": run_subgradient,
        "dual_averaging": run_dual_averaging,
        "gradient": run_gradient,
        "nesterov": run_nesterov,
        "lbfgs": run_lbfgs,
    }[algo]
    return runner(objective, w0, config)
