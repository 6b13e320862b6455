"""Per-datapoint losses of linear models, their gradients, and the ridge term."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

INTERCEPT_NAME = "(intercept)"


class LossKind(str, enum.Enum):
    SQUARED = "squared"
    LOGISTIC = "logistic"

    @classmethod
    def parse(cls, value) -> "LossKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown loss kind {value!r}") from None


class Task(str, enum.Enum):
    REGRESSION = "regression"
    BINARY_CLASSIFICATION = "binary_classification"


def default_loss(task: Task) -> LossKind:
    return LossKind.SQUARED if task is Task.REGRESSION else LossKind.LOGISTIC


@dataclass(frozen=True)
class Dataset:
    """Immutable design matrix and targets (the empirical distribution).

    ``has_intercept`` marks a trailing all-ones column added by
    :meth:`with_intercept`; that coordinate is never penalized.
    """

    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple = ()
    task: Task = Task.REGRESSION
    has_intercept: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        y = np.array(self.targets, dtype=np.float64).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("features must be a non-empty n x d matrix")
        if y.shape[0] != X.shape[0]:
            raise ValueError("features and targets disagree on the number of rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        task = Task(self.task)
        if task is Task.BINARY_CLASSIFICATION and not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("binary targets must be coded 0/1")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("feature_names length does not match d")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "task", task)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(self.features[rows], self.targets[rows], self.feature_names,
                       self.task, self.has_intercept, dict(self.meta))

    def with_intercept(self) -> "Dataset":
        if self.has_intercept:
            return self
        X = np.hstack([self.features, np.ones((self.n, 1))])
        return Dataset(X, self.targets, self.feature_names + (INTERCEPT_NAME,),
                       self.task, True, dict(self.meta))


def _check_dims(w: np.ndarray, d: int) -> None:
    if w.shape != (d,):
        raise ValueError(f"weight dimension {w.shape} does not match feature dimension {d}")


def predict(w, x) -> float:
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_dims(w, x.shape[-1])
    return float(w @ x)


def _stable_sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def loss_from_margin(kind: LossKind, z, y):
    """Loss as a function of the linear prediction ``z = w @ x``."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if kind is LossKind.SQUARED:
        r = y - z
        return r * r
    # max(z, 0) - y z + log(1 + exp(-|z|))
    return np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))


def dloss_from_margin(kind: LossKind, z, y):
    """Derivative of the loss in ``z``; the gradient in w is this times x."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if kind is LossKind.SQUARED:
        return -2.0 * (y - z)
    return _stable_sigmoid(z) - y


def pointwise_loss(kind, w, x, y) -> float:
    kind = LossKind.parse(kind)
    return float(loss_from_margin(kind, predict(w, x), y))


def pointwise_grad(kind, w, x, y) -> np.ndarray:
    kind = LossKind.parse(kind)
    x = np.asarray(x, dtype=np.float64)
    return float(dloss_from_margin(kind, predict(w, x), y)) * x


def margins(w, D: Dataset) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    _check_dims(w, D.d)
    return D.features @ w


def batch_losses(kind, w, D: Dataset) -> np.ndarray:
    """LossVector of all datapoints at ``w``, in row order."""
    kind = LossKind.parse(kind)
    return loss_from_margin(kind, margins(w, D), D.targets)


def weighted_gradient(kind, z, D: Dataset, rows, weights) -> np.ndarray:
    """``sum_i weights_i * grad L^i`` over the given rows only.

    Only the selected rows of the Jacobian are touched, so tail-restricted
    sums cost O(|rows| d).
    """
    rows = np.asarray(rows, dtype=np.intp)
    if rows.shape[0] == 0:
        return np.zeros(D.d)
    r = dloss_from_margin(kind, z[rows], D.targets[rows])
    return D.features[rows].T @ (np.asarray(weights, dtype=np.float64) * r)


def ridge_term(w, lam: float, intercept: bool = False) -> tuple[float, np.ndarray]:
    """``(lam/2) ||w||^2`` and its gradient, skipping a trailing intercept."""
    if lam < 0:
        raise ValueError("ridge parameter must be non-negative")
    w = np.asarray(w, dtype=np.float64)
    wp = w.copy()
    if intercept:
        wp[-1] = 0.0
    return 0.5 * lam * float(wp @ wp), lam * wp
