"""Dataset ingestion, preprocessing, splits, shifts and synthetic generators.

All randomized operations take an explicit integer seed and build their own
``numpy.random.Generator`` (PCG64), so one operation never perturbs the
stream of another. Use :func:`derive_seed` to obtain per-operation seeds
from a run seed.
"""
from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import INTERCEPT_NAME, Dataset, Task


class DataError(ValueError):
    """Malformed input data or an infeasible transform."""


def derive_seed(seed: int, tag: str) -> int:
    """Stable 63-bit seed for the operation named ``tag`` within run ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(tag.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Schema:
    target: str
    task: Task = Task.REGRESSION
    categorical: tuple = ()
    ignore: tuple = ()
    positive_label: str | None = None

    @classmethod
    def from_obj(cls, obj) -> "Schema":
        if isinstance(obj, Schema):
            return obj
        if isinstance(obj, (str, Path)):
            with open(obj, encoding="utf-8") as fh:
                obj = json.load(fh)
        if not isinstance(obj, dict) or "target" not in obj:
            raise DataError("schema must be an object with a 'target' field")
        unknown = set(obj) - {"target", "task", "categorical", "ignore", "positive_label"}
        if unknown:
            raise DataError(f"unknown schema fields: {sorted(unknown)}")
        try:
            task = Task(obj.get("task", "regression"))
        except ValueError:
            raise DataError(f"unknown task {obj.get('task')!r}") from None
        pos = obj.get("positive_label")
        return cls(str(obj["target"]), task, tuple(obj.get("categorical", ())),
                   tuple(obj.get("ignore", ())), None if pos is None else str(pos))

    def to_dict(self) -> dict:
        out = {"target": self.target, "task": self.task.value,
               "categorical": list(self.categorical)}
        if self.ignore:
            out["ignore"] = list(self.ignore)
        if self.positive_label is not None:
            out["positive_label"] = self.positive_label
        return out


_MISSING = {"", "na", "nan", "null", "none", "?"}


def _parse_float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(s)
    return v


def _binary_targets(raw: list[str], positive: str | None) -> np.ndarray:
    if positive is not None:
        if positive not in raw:
            raise DataError(f"positive label {positive!r} never occurs in the target column")
        y = np.array([1.0 if v == positive else 0.0 for v in raw])
        levels = set(raw)
        if len(levels) > 2:
            raise DataError(f"classification target has {len(levels)} levels, expected 2")
        return y
    try:
        vals = np.array([float(v) for v in raw])
    except ValueError:
        raise DataError("non-numeric classification target; set positive_label in the schema") from None
    levels = set(np.unique(vals).tolist())
    if levels <= {0.0, 1.0}:
        return vals
    if levels <= {-1.0, 1.0}:
        return (vals > 0).astype(np.float64)
    raise DataError(f"non-binary target for classification: levels {sorted(levels)}")


def load_csv(path, schema) -> Dataset:
    """Read a header-ful CSV into a :class:`Dataset`.

    Numeric columns are parsed as floats; categorical columns become one
    indicator per observed level, levels in lexicographic order. Missing
    values are rejected with the offending (1-based, header excluded) rows.
    """
    schema = Schema.from_obj(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if not rows:
        raise DataError(f"{path}: no data rows")
    if schema.target not in header:
        raise DataError(f"target column {schema.target!r} not in header")
    for c in schema.categorical + schema.ignore:
        if c not in header:
            raise DataError(f"schema column {c!r} not in header")
    bad_width = [i + 1 for i, r in enumerate(rows) if len(r) != len(header)]
    if bad_width:
        raise DataError(f"rows with wrong number of fields: {bad_width[:20]}")
    missing = [i + 1 for i, r in enumerate(rows) if any(v.strip().lower() in _MISSING for v in r)]
    if missing:
        raise DataError(f"missing values in rows {missing[:20]}"
                        + (" ..." if len(missing) > 20 else ""))

    col = {h: j for j, h in enumerate(header)}
    raw_target = [r[col[schema.target]].strip() for r in rows]
    if schema.task is Task.BINARY_CLASSIFICATION:
        y = _binary_targets(raw_target, schema.positive_label)
    else:
        try:
            y = np.array([_parse_float(v) for v in raw_target])
        except ValueError:
            raise DataError("non-numeric regression target") from None

    blocks, names = [], []
    for h in header:
        if h == schema.target or h in schema.ignore:
            continue
        values = [r[col[h]].strip() for r in rows]
        if h in schema.categorical:
            levels = sorted(set(values))
            blocks.append(np.array([[1.0 if v == lev else 0.0 for lev in levels] for v in values]))
            names.extend(f"{h}={lev}" for lev in levels)
        else:
            try:
                blocks.append(np.array([_parse_float(v) for v in values]).reshape(-1, 1))
            except ValueError:
                bad = [i + 1 for i, v in enumerate(values) if not _is_float(v)]
                raise DataError(f"non-numeric value in column {h!r}, rows {bad[:20]}; "
                                "declare it categorical") from None
            names.append(h)
    if not blocks:
        raise DataError("no feature columns")
    return Dataset(np.hstack(blocks), y, tuple(names), schema.task,
                   meta={"source": str(path)})


def _is_float(v: str) -> bool:
    try:
        _parse_float(v)
    except ValueError:
        return False
    return True


def write_csv(D: Dataset, path, target_name: str = "target") -> Schema:
    """Write ``D`` as CSV (intercept column dropped) and return its schema."""
    keep = [j for j, nm in enumerate(D.feature_names) if nm != INTERCEPT_NAME or not D.has_intercept]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([D.feature_names[j] for j in keep] + [target_name])
        for i in range(D.n):
            w.writerow([repr(float(D.features[i, j])) for j in keep]
                       + [repr(float(D.targets[i])) if D.task is Task.REGRESSION
                          else str(int(D.targets[i]))])
    return Schema(target_name, D.task)


# --------------------------------------------------------------------------
# preprocessing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Scaler:
    """Per-column affine map fitted on training rows (population std)."""

    mean: np.ndarray
    scale: np.ndarray

    def apply(self, D: Dataset) -> Dataset:
        if D.d != self.mean.shape[0]:
            raise ValueError("scaler fitted on a different number of features")
        X = (D.features - self.mean) / self.scale
        return Dataset(X, D.targets, D.feature_names, D.task, D.has_intercept, dict(D.meta))


def standardize(D: Dataset) -> tuple[Dataset, Scaler]:
    X = D.features
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # constant columns (including an intercept) pass through untouched
    const = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    mean = np.where(const, 0.0, mean)
    scale = np.where(const, 1.0, std)
    scaler = Scaler(mean, scale)
    return scaler.apply(D), scaler


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train_fraction must lie in (0, 1)")


def train_test_split(D: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Seeded shuffle; the first ceil(fraction * n) shuffled rows train."""
    n = D.n
    if n < 2:
        raise DataError("need at least two rows to split")
    perm = _rng(spec.seed).permutation(n)
    n_train = min(max(math.ceil(spec.train_fraction * n - 1e-9), 1), n - 1)
    return D.subset(np.sort(perm[:n_train])), D.subset(np.sort(perm[n_train:]))


# --------------------------------------------------------------------------
# distributional shifts
# --------------------------------------------------------------------------

def class_counts(D: Dataset) -> tuple[int, int]:
    pos = int(np.sum(D.targets == 1.0))
    return D.n - pos, pos


def minority_label(D: Dataset) -> int:
    """Label of the rarer class; ties count label 1 as the minority."""
    n0, n1 = class_counts(D)
    return 0 if n0 < n1 else 1


def _class_rows(D: Dataset):
    if D.task is not Task.BINARY_CLASSIFICATION:
        raise DataError("shift transforms need a binary classification dataset")
    minority = minority_label(D)
    rows_min = np.flatnonzero(D.targets == minority)
    rows_maj = np.flatnonzero(D.targets != minority)
    if rows_min.shape[0] == 0 or rows_maj.shape[0] == 0:
        raise DataError("both classes must be present")
    return rows_min, rows_maj


def downsample_majority(D: Dataset, ratio: float = 0.10, seed: int = 0) -> Dataset:
    """Keep every minority row and ceil(ratio * n_min) random majority rows."""
    if not ratio > 0:
        raise DataError("ratio must be positive")
    rows_min, rows_maj = _class_rows(D)
    k = math.ceil(ratio * rows_min.shape[0] - 1e-9)
    if k > rows_maj.shape[0]:
        raise DataError(f"cannot keep {k} majority rows out of {rows_maj.shape[0]}")
    kept = _rng(seed).choice(rows_maj, size=k, replace=False)
    return D.subset(np.sort(np.concatenate((rows_min, kept))))


def rebalance(D: Dataset, alpha: float, seed: int = 0) -> Dataset:
    """ceil(alpha * n_min) majority rows plus ceil((1 - alpha) * n_min) minority rows."""
    if not (0.0 < alpha < 1.0):
        raise DataError("alpha must lie in (0, 1)")
    rows_min, rows_maj = _class_rows(D)
    n_min = rows_min.shape[0]
    k_maj = math.ceil(alpha * n_min - 1e-9)
    k_min = math.ceil((1.0 - alpha) * n_min - 1e-9)
    if k_maj > rows_maj.shape[0] or k_min > n_min:
        raise DataError(f"alpha={alpha} requests {k_maj} majority / {k_min} minority rows, "
                        f"only {rows_maj.shape[0]} / {n_min} available")
    rng = _rng(seed)
    kept_maj = rng.choice(rows_maj, size=k_maj, replace=False)
    kept_min = rng.choice(rows_min, size=k_min, replace=False)
    return D.subset(np.sort(np.concatenate((kept_maj, kept_min))))


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------

def laplace_inverse_cdf(v, loc: float = 0.0, scale: float = 1.0):
    """Laplace quantile function evaluated at ``v`` in (0, 1)."""
    c = np.asarray(v, dtype=np.float64) - 0.5
    return loc - scale * np.sign(c) * np.log1p(-2.0 * np.abs(c))


def mixture_noise(n: int, rng: np.random.Generator, beta: float = 0.8,
                  laplace_loc: float = 10.0, laplace_scale: float = 1.0) -> np.ndarray:
    """Standard normal with probability ``beta``, else Laplace(loc, scale)."""
    pick = rng.random(n) < beta
    normal = rng.standard_normal(n)
    lap = laplace_inverse_cdf(rng.random(n), laplace_loc, laplace_scale)
    return np.where(pick, normal, lap)


def synth_regression(n: int, d: int = 40, seed: int = 0, *, rank: int | None = None,
                     beta: float = 0.8, laplace_loc: float = 10.0,
                     laplace_scale: float = 1.0) -> tuple[Dataset, np.ndarray]:
    """Linear targets with heavy right-skewed mixture noise.

    Rows are i.i.d. ``x = a @ B / sqrt(rank)`` with a fixed seeded basis ``B``
    (``rank x d``, default rank ``round(3d/4)``) and fresh Gaussian ``a``,
    so generating more rows with the same seed extends the same
    distribution. Returns the dataset and the true weights.
    """
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    r = rank if rank is not None else max(1, round(0.75 * d))
    s_basis, s_w, s_rows, s_noise = np.random.SeedSequence(int(seed)).spawn(4)
    basis = np.random.default_rng(s_basis).standard_normal((r, d))
    w_true = np.random.default_rng(s_w).standard_normal(d)
    X = np.random.default_rng(s_rows).standard_normal((n, r)) @ basis / math.sqrt(r)
    eps = mixture_noise(n, np.random.default_rng(s_noise), beta, laplace_loc, laplace_scale)
    y = X @ w_true + eps
    D = Dataset(X, y, task=Task.REGRESSION,
                meta={"generator": "regression", "n": n, "d": d, "seed": seed, "rank": r})
    return D, w_true


def synth_classification(n: int, d: int = 5, class_sep: float = 2.0, seed: int = 0, *,
                         positive_fraction: float = 0.5) -> Dataset:
    """Two unit-covariance Gaussian blobs at ``±(class_sep/2) * 1/sqrt(d)``.

    ``round(positive_fraction * n)`` rows carry label 1 (the ``+`` blob).
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if not (0.0 < positive_fraction < 1.0):
        raise ValueError("positive_fraction must lie in (0, 1)")
    rng = _rng(seed)
    n_pos = min(max(round(positive_fraction * n), 1), n - 1)
    y = np.zeros(n)
    y[rng.permutation(n)[:n_pos]] = 1.0
    center = (class_sep / 2.0) / math.sqrt(d) * np.ones(d)
    X = rng.standard_normal((n, d)) + np.where(y[:, None] == 1.0, center, -center)
    return Dataset(X, y, task=Task.BINARY_CLASSIFICATION,
                   meta={"generator": "classification", "n": n, "d": d, "seed": seed,
                         "class_sep": class_sep, "positive_fraction": positive_fraction})
