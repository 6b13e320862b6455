"""Experiment drivers behind the CLI subcommands.

Each ``cmd_*`` function takes an :class:`~sqlearn.config.ExperimentConfig`
and returns a JSON-ready report dict. Seeds run as independent tasks
(``SQLEARN_THREADS`` caps the pool); results are ordered by seed index.
"""
from __future__ import annotations

import dataclasses
import datetime as _dt
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import data as sqdata
from ._backend import BACKEND
from .config import ConfigError, ExperimentConfig
from .losses import Dataset, LossKind, Task, batch_losses, default_loss, loss_from_margin, margins
from .metrics import compute_metrics, histogram
from .optimizers import OptimizerConfig, RunTrace, optimize
from .oracles import Objective, superquantile_subgradient
from .report import SCHEMA_VERSION
from .tail_measures import quantile, superquantile


def _threads() -> int:
    raw = os.environ.get("SQLEARN_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError("SQLEARN_THREADS must be an integer") from None
    return os.cpu_count() or 1


def map_seeds(fn, seeds):
    """``[fn(s) for s in seeds]``, evaluated concurrently."""
    seeds = list(seeds)
    workers = min(len(seeds), _threads())
    if workers <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


# --------------------------------------------------------------------------
# data pipeline
# --------------------------------------------------------------------------

def load_dataset(cfg: ExperimentConfig, seed: int) -> Dataset:
    d = cfg.data
    if d.source == "csv":
        return sqdata.load_csv(d.path, d.schema)
    data_seed = d.seed if d.seed is not None else sqdata.derive_seed(seed, "data")
    if d.generator == "regression":
        D, _ = sqdata.synth_regression(int(d.n), int(d.d), data_seed, rank=d.rank)
        return D
    return sqdata.synth_classification(int(d.n), int(d.d), float(d.class_sep), data_seed,
                                       positive_fraction=float(d.positive_fraction))


def loss_kind(cfg: ExperimentConfig, D: Dataset) -> LossKind:
    kind = LossKind.parse(cfg.loss) if cfg.loss else default_loss(D.task)
    if kind is LossKind.LOGISTIC and D.task is not Task.BINARY_CLASSIFICATION:
        raise ConfigError("logistic loss needs a binary classification dataset")
    return kind


def apply_shift(cfg: ExperimentConfig, train: Dataset, seed: int) -> Dataset:
    s = cfg.shift
    if s is None:
        return train
    shift_seed = sqdata.derive_seed(seed, "shift")
    if s.kind == "downsample_majority":
        return sqdata.downsample_majority(train, s.ratio, shift_seed)
    return sqdata.rebalance(train, s.alpha, shift_seed)


def finalize(cfg: ExperimentConfig, train: Dataset, test: Dataset):
    """Standardize on training rows, then append the intercept column."""
    if cfg.standardize:
        train, scaler = sqdata.standardize(train)
        test = scaler.apply(test)
    if cfg.bias:
        train, test = train.with_intercept(), test.with_intercept()
    return train, test


def split(cfg: ExperimentConfig, D: Dataset, seed: int):
    spec = sqdata.SplitSpec(cfg.train_fraction, sqdata.derive_seed(seed, "split"))
    return sqdata.train_test_split(D, spec)


def prepare(cfg: ExperimentConfig, seed: int, shift: bool = True):
    """Raw data -> (train, test): split, shift the training part, finalize."""
    D = load_dataset(cfg, seed)
    train, test = split(cfg, D, seed)
    if shift:
        train = apply_shift(cfg, train, seed)
    return finalize(cfg, train, test)


# --------------------------------------------------------------------------
# training and evaluation
# --------------------------------------------------------------------------

@dataclass
class Fit:
    weights: np.ndarray
    trace: RunTrace
    objective: Objective
    kind_name: str

    def summary(self, with_trace: bool = False) -> dict:
        obj = self.objective
        out = {
            "objective": self.kind_name,
            "p": obj.p,
            "mu": obj.mu,
            "lambda": obj.lam,
            "termination": self.trace.reason,
            "iterations": self.trace.iterations,
            "final_objective": float(obj(self.weights).value),
            "weights": [float(v) for v in self.weights],
        }
        if with_trace:
            out["trace"] = self.trace.to_dict()
        return out


def fit(cfg: ExperimentConfig, train: Dataset, kind: LossKind, objective: str, seed: int,
        p: float = 0.0, mu: float | None = None, algorithm: str | None = None) -> Fit:
    mode = {"erm": "erm", "superquantile": "superquantile",
            "smoothed_superquantile": "smoothed"}[objective]
    lam = cfg.lam if cfg.lam is not None else 1.0 / train.n
    obj = Objective(kind, train, mode, p, mu if mode == "smoothed" else None, lam)
    opt = dataclasses.replace(cfg.optimizer, seed=sqdata.derive_seed(seed, "optimizer"),
                              **({"algorithm": algorithm} if algorithm else {}))
    w, trace = optimize(obj, np.zeros(train.d), opt)
    return Fit(w, trace, obj, objective)


def test_losses(kind: LossKind, w, test: Dataset) -> np.ndarray:
    return batch_losses(kind, w, test)


def evaluate(kind: LossKind, w, test: Dataset, p: float) -> dict:
    z = margins(w, test)
    losses = loss_from_margin(kind, z, test.targets)
    preds = 0.5 * (1.0 + np.tanh(0.5 * z)) if test.task is Task.BINARY_CLASSIFICATION else z
    return compute_metrics(preds, test.targets, test.task, p, losses=losses)


def _aggregate(rows: list[dict], keys, prefix: str = "") -> dict:
    out = {}
    for k in keys:
        vals = [r[k] for r in rows if k in r]
        if vals:
            arr = np.asarray(vals, dtype=np.float64)
            out[prefix + k] = {"mean": float(arr.mean()), "std": float(arr.std())}
    return out


_AGG_KEYS = ("accuracy", "precision", "mean_loss", "loss_q50", "loss_q90", "loss_qp",
             "final_objective")


def _report(command: str, cfg: ExperimentConfig, runs, aggregate, **extra) -> dict:
    rep = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "backend": BACKEND,
        "config": cfg.to_dict(),
        "runs": runs,
        "aggregate": aggregate,
    }
    rep.update(extra)
    return rep


def _metric_row(metrics: dict, model: dict) -> dict:
    row = dict(metrics)
    row["final_objective"] = model["final_objective"]
    return row


def _objective_p(cfg: ExperimentConfig) -> float:
    return 0.0 if cfg.objective.kind == "erm" else float(cfg.objective.p)


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig) -> dict:
    o = cfg.objective
    p = _objective_p(cfg)

    def one(seed):
        train, test = prepare(cfg, seed)
        kind = loss_kind(cfg, train)
        f = fit(cfg, train, kind, o.kind, seed, p, o.mu)
        metrics = evaluate(kind, f.weights, test, p if p > 0 else 0.9)
        return {
            "seed": seed,
            "n_train": train.n,
            "n_test": test.n,
            "model": f.summary(cfg.save_traces),
            "metrics": metrics,
            "histogram": histogram(test_losses(kind, f.weights, test), cfg.histogram_bins),
        }

    runs = map_seeds(one, cfg.seeds)
    agg = _aggregate([_metric_row(r["metrics"], r["model"]) for r in runs], _AGG_KEYS)
    return _report("train", cfg, runs, agg)


# --------------------------------------------------------------------------
# cross-validation over p
# --------------------------------------------------------------------------

def fold_assignment(labels: np.ndarray, k: int, seed: int, stratified: bool = False) -> np.ndarray:
    """Seeded round-robin fold ids after a shuffle (optionally per class)."""
    n = labels.shape[0]
    rng = np.random.Generator(np.random.PCG64(seed))
    folds = np.empty(n, dtype=np.intp)
    if stratified:
        offset = 0
        for c in np.unique(labels):
            rows = rng.permutation(np.flatnonzero(labels == c))
            folds[rows] = (np.arange(rows.shape[0]) + offset) % k
            offset += rows.shape[0]
    else:
        perm = rng.permutation(n)
        folds[perm] = np.arange(n) % k
    return folds


def _cv_score(metric: str, kind: LossKind, w, val: Dataset) -> float:
    if metric == "accuracy":
        return evaluate(kind, w, val, 0.9)["accuracy"]
    return quantile(test_losses(kind, w, val), 0.9)


def cross_validate(cfg: ExperimentConfig, train: Dataset, kind: LossKind, seed: int,
                   warn: list) -> tuple[float, dict]:
    """Pick p from ``cfg.cv.p_grid``; ties go to the smaller p."""
    c = cfg.cv
    metric = c.metric or ("accuracy" if train.task is Task.BINARY_CLASSIFICATION else "val_loss_p90")
    if metric == "accuracy" and train.task is not Task.BINARY_CLASSIFICATION:
        raise ConfigError("accuracy CV metric needs a classification task")
    maximize = metric == "accuracy"
    k = int(c.folds)
    if k > train.n:
        raise sqdata.DataError(f"{k} folds but only {train.n} training rows")
    folds = fold_assignment(train.targets, k, sqdata.derive_seed(seed, "cv"), c.stratified)
    scores = {}
    for p in sorted(float(v) for v in c.p_grid):
        vals = []
        for j in range(k):
            tr = train.subset(np.flatnonzero(folds != j))
            va = train.subset(np.flatnonzero(folds == j))
            if train.task is Task.BINARY_CLASSIFICATION and np.unique(va.targets).shape[0] < 2:
                msg = f"seed {seed}: validation fold {j} holds a single class"
                if msg not in warn:
                    warn.append(msg)
            f = fit(cfg, tr, kind, cfg.objective.kind, seed, p, cfg.objective.mu)
            vals.append(_cv_score(metric, kind, f.weights, va))
        scores[p] = float(np.mean(vals))
    best = None
    for p, s in scores.items():
        if best is None or (s > scores[best] if maximize else s < scores[best]):
            best = p
    return best, {"metric": metric, "scores": {repr(p): s for p, s in scores.items()}}


def cmd_cv(cfg: ExperimentConfig):
    """Tune p by k-fold CV on the (shifted) training set, retrain, and compare with ERM.

    Returns ``(best_p_per_seed, report)``.
    """
    if cfg.objective.kind == "erm":
        raise ConfigError("cv tunes p and needs a superquantile objective")
    warn: list = []

    def one(seed):
        train, test = prepare(cfg, seed)
        kind = loss_kind(cfg, train)
        best_p, table = cross_validate(cfg, train, kind, seed, warn)
        f = fit(cfg, train, kind, cfg.objective.kind, seed, best_p, cfg.objective.mu)
        g = fit(cfg, train, kind, "erm", seed)
        return {
            "seed": seed,
            "n_train": train.n,
            "n_test": test.n,
            "best_p": best_p,
            "cv": table,
            "model": f.summary(cfg.save_traces),
            "metrics": evaluate(kind, f.weights, test, best_p),
            "histogram": histogram(test_losses(kind, f.weights, test), cfg.histogram_bins),
            "erm_model": g.summary(cfg.save_traces),
            "erm_metrics": evaluate(kind, g.weights, test, best_p),
            "erm_histogram": histogram(test_losses(kind, g.weights, test), cfg.histogram_bins),
        }

    runs = map_seeds(one, cfg.seeds)
    agg = _aggregate([_metric_row(r["metrics"], r["model"]) for r in runs], _AGG_KEYS)
    agg.update(_aggregate([_metric_row(r["erm_metrics"], r["erm_model"]) for r in runs],
                          _AGG_KEYS, prefix="erm_"))
    agg.update(_aggregate([{"best_p": r["best_p"]} for r in runs], ("best_p",)))
    return [r["best_p"] for r in runs], _report("cv", cfg, runs, agg, warnings=sorted(warn))


# --------------------------------------------------------------------------
# class-rebalancing sweep
# --------------------------------------------------------------------------

def default_alphas(count: int = 100) -> list:
    return np.linspace(0.0, 1.0, count + 2)[1:-1].tolist()


def cmd_shift_sweep(cfg: ExperimentConfig, alphas=None) -> dict:
    if cfg.objective.kind == "erm":
        raise ConfigError("shift-sweep compares ERM against a superquantile objective")
    alphas = list(alphas if alphas is not None else (cfg.alphas or default_alphas()))
    p = float(cfg.objective.p)

    def one(seed):
        D = load_dataset(cfg, seed)
        if D.task is not Task.BINARY_CLASSIFICATION:
            raise ConfigError("shift-sweep needs a classification dataset")
        raw_train, raw_test = split(cfg, D, seed)
        cells, skipped = [], []
        for i, alpha in enumerate(alphas):
            try:
                shifted = sqdata.rebalance(raw_train, alpha,
                                           sqdata.derive_seed(seed, f"rebalance:{i}"))
            except sqdata.DataError as exc:
                skipped.append(f"seed {seed}, alpha {alpha}: {exc}")
                continue
            train, test = finalize(cfg, shifted, raw_test)
            kind = loss_kind(cfg, train)
            f = fit(cfg, train, kind, cfg.objective.kind, seed, p, cfg.objective.mu)
            g = fit(cfg, train, kind, "erm", seed)
            ms, me = evaluate(kind, f.weights, test, p), evaluate(kind, g.weights, test, p)
            cells.append({"alpha": alpha, "n_train": train.n,
                          "superquantile": {"test_loss": ms["mean_loss"], "accuracy": ms["accuracy"],
                                            "termination": f.trace.reason},
                          "erm": {"test_loss": me["mean_loss"], "accuracy": me["accuracy"],
                                  "termination": g.trace.reason}})
        return {"seed": seed, "cells": cells, "skipped": skipped}

    per_seed = map_seeds(one, cfg.seeds)
    sweep = {"p": p, "alphas": alphas, "seeds": list(cfg.seeds),
             "alpha": [], "seed": [], "skipped": []}
    for model in ("superquantile", "erm"):
        sweep[model] = {"test_loss": [], "accuracy": []}
    for r in per_seed:
        sweep["skipped"].extend(r["skipped"])
        for c in r["cells"]:
            sweep["alpha"].append(c["alpha"])
            sweep["seed"].append(r["seed"])
            for model in ("superquantile", "erm"):
                for key in ("test_loss", "accuracy"):
                    sweep[model][key].append(c[model][key])
    bins = cfg.histogram_bins
    agg = {}
    for model in ("superquantile", "erm"):
        for key in ("test_loss", "accuracy"):
            vals = sweep[model][key]
            if vals:
                sweep[model][key + "_histogram"] = histogram(vals, bins)
                sweep[model][key + "_q90"] = quantile(vals, 0.9)
                agg[f"{model}_{key}"] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    runs = [{"seed": r["seed"], "cells": r["cells"]} for r in per_seed]
    return _report("shift-sweep", cfg, runs, agg, sweep=sweep, warnings=list(sweep["skipped"]))


# --------------------------------------------------------------------------
# smoothing-parameter sweep
# --------------------------------------------------------------------------

def default_mus() -> list:
    return np.logspace(-6, 8, 15).tolist()


def cmd_mu_sweep(cfg: ExperimentConfig, mus=None) -> dict:
    """Train with L-BFGS for each mu and compare smoothed vs exact superquantile values."""
    if cfg.objective.kind == "erm":
        raise ConfigError("mu-sweep needs a superquantile objective level p")
    mus = list(mus if mus is not None else (cfg.mus or default_mus()))
    p = float(cfg.objective.p)

    def one(seed):
        train, test = prepare(cfg, seed)
        kind = loss_kind(cfg, train)
        g = fit(cfg, train, kind, "erm", seed, algorithm="lbfgs")
        erm_exact = superquantile_subgradient(kind, g.weights, train, p, g.objective.lam).value
        reference = {
            "erm_objective": float(g.objective(g.weights).value),
            "erm_mean_loss": float(np.mean(batch_losses(kind, g.weights, train))),
            "erm_exact_superquantile": float(erm_exact),
            "erm_termination": g.trace.reason,
        }
        cells = []
        for mu in mus:
            f = fit(cfg, train, kind, "smoothed_superquantile", seed, p, float(mu), algorithm="lbfgs")
            exact = superquantile_subgradient(kind, f.weights, train, p, f.objective.lam).value
            cells.append({
                "mu": float(mu),
                "smoothed_objective": float(f.objective(f.weights).value),
                "exact_objective": float(exact),
                "termination": f.trace.reason,
                "iterations": f.trace.iterations,
            })
        return {"seed": seed, "reference": reference, "cells": cells}

    runs = map_seeds(one, cfg.seeds)
    failures = {repr(float(mu)): sum(c["termination"] == "line_search_failure"
                                     for r in runs for c in r["cells"] if c["mu"] == float(mu))
                for mu in mus}
    sweep = {"p": p, "mus": [float(m) for m in mus], "line_search_failures": failures}
    agg = {}
    for key in ("smoothed_objective", "exact_objective"):
        for mu in mus:
            vals = [c[key] for r in runs for c in r["cells"] if c["mu"] == float(mu)]
            agg[f"{key}@{float(mu):.3g}"] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    return _report("mu-sweep", cfg, runs, agg, sweep=sweep)


# --------------------------------------------------------------------------
# statistical consistency smoke check
# --------------------------------------------------------------------------

def uniform_convergence_gap(n: int, seed: int, p: float = 0.9, grid_size: int = 20) -> float:
    """max over a w-grid of |SQ_p(losses on n points) - SQ_p(losses on 10n points)|.

    Bounded synthetic problem: x, noise uniform, loss ``(y - w x)^2`` with
    ``|x|, |w| <= 1`` and ``|y| <= 1``; the n-sample is the prefix of the
    10n-sample.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    m = 10 * n
    x = rng.uniform(-1.0, 1.0, m)
    y = np.clip(0.5 * x + rng.uniform(-0.5, 0.5, m), -1.0, 1.0)
    gaps = []
    for w in np.linspace(-1.0, 1.0, grid_size):
        losses = (y - w * x) ** 2
        gaps.append(abs(superquantile(losses[:n], p) - superquantile(losses, p)))
    return float(max(gaps))
