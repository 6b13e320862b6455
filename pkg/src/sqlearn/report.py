"""Report layout shared by every subcommand (JSON schema, draft 2020-12)."""
from __future__ import annotations

import csv
import json

SCHEMA_VERSION = "1.0"

_HIST = {
    "type": "object",
    "required": ["edges", "counts"],
    "properties": {
        "edges": {"type": "array", "items": {"type": "number"}, "minItems": 2},
        "counts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    },
}

_METRICS = {
    "type": "object",
    "required": ["n", "mean_loss", "loss_q50", "loss_q90", "loss_qp"],
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "precision": {"type": "number", "minimum": 0, "maximum": 1},
        "mean_loss": {"type": "number"},
        "loss_q50": {"type": "number"},
        "loss_q90": {"type": "number"},
        "loss_qp": {"type": "number"},
    },
}

_MODEL = {
    "type": "object",
    "required": ["objective", "lambda", "termination", "iterations", "final_objective", "weights"],
    "properties": {
        "objective": {"enum": ["erm", "superquantile", "smoothed_superquantile"]},
        "termination": {"enum": ["converged", "max_iter", "line_search_failure"]},
        "iterations": {"type": "integer", "minimum": 0},
        "final_objective": {"type": "number"},
        "weights": {"type": "array", "items": {"type": "number"}},
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "command", "created", "backend", "config", "runs", "aggregate"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"enum": ["train", "cv", "shift-sweep", "mu-sweep"]},
        "created": {"type": "string"},
        "backend": {"enum": ["cython", "python"]},
        "config": {"type": "object"},
        "warnings": {"type": "array", "items": {"type": "string"}},
        "runs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["seed"],
                "properties": {
                    "seed": {"type": "integer"},
                    "model": _MODEL,
                    "erm_model": _MODEL,
                    "metrics": _METRICS,
                    "erm_metrics": _METRICS,
                    "histogram": _HIST,
                    "erm_histogram": _HIST,
                    "best_p": {"type": "number"},
                },
            },
        },
        "aggregate": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["mean", "std"],
                "properties": {"mean": {"type": "number"}, "std": {"type": "number"}},
            },
        },
        "sweep": {"type": "object"},
    },
}


def write_json(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_histogram_csv(report: dict, path) -> None:
    """One row per bin of every histogram found in the report's runs."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "model", "bin", "left_edge", "right_edge", "count"])
        for run in report.get("runs", []):
            for key, model in (("histogram", "model"), ("erm_histogram", "erm")):
                h = run.get(key)
                if h is None:
                    continue
                edges, counts = h["edges"], h["counts"]
                for b, c in enumerate(counts):
                    w.writerow([run["seed"], model, b, edges[b], edges[b + 1], c])
