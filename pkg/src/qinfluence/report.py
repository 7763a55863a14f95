"""Structured fit reports: building, serialising and the JSON schema they follow."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .geometry import Correspondences, fundamental_to_model, linearize
from .errors import DegeneracyError
from .pipeline import AccumulationConfig, FitResult, LinearFrame

#: Significant digits kept for every float in a report.
FLOAT_DIGITS = 12

_NUMBER = {"type": "number"}
_MATRIX = {
    "type": "array", "minItems": 3, "maxItems": 3,
    "items": {"type": "array", "minItems": 3, "maxItems": 3, "items": _NUMBER},
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "fit-f report",
    "type": "object",
    "required": ["config", "influences", "model", "consensus"],
    "properties": {
        "config": {
            "type": "object",
            "required": ["epsilon", "M", "T", "H", "engine", "bits", "seed"],
            "properties": {
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "M": {"type": "integer", "minimum": 1},
                "T": {"type": "integer", "minimum": 1},
                "H": {"type": "integer", "minimum": 1},
                "engine": {"enum": ["classical-1d", "quantum-1d"]},
                "bits": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
            },
        },
        "influences": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "model": {
            "type": "object",
            "required": ["x", "F"],
            "properties": {
                "x": {"type": "array", "minItems": 8, "maxItems": 8, "items": _NUMBER},
                "F": _MATRIX,
            },
            "additionalProperties": False,
        },
        "consensus": {"type": "integer", "minimum": 0},
        "auc": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "nsgd": {"type": ["number", "null"], "minimum": 0},
        "accurate": {"type": "boolean"},
        "ransac": {
            "type": "object",
            "required": ["consensus", "F"],
            "properties": {
                "consensus": {"type": "integer", "minimum": 0},
                "F": _MATRIX,
                "auc": {"type": ["number", "null"]},
                "nsgd": {"type": ["number", "null"]},
                "accurate": {"type": "boolean"},
            },
        },
        "timings": {"type": "object", "additionalProperties": _NUMBER},
    },
    "additionalProperties": False,
}


def _clean(value):
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_clean(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            return None
        return float(f"{v:.{FLOAT_DIGITS}g}") + 0.0  # + 0.0 folds -0.0
    return value


def dumps(document: dict) -> str:
    """Serialise with floats cut to 12 significant digits; key order is preserved."""
    return json.dumps(_clean(document), indent=2, allow_nan=False) + "\n"


def build_report(config: AccumulationConfig, fit: FitResult, metrics: dict | None = None,
                 ransac: FitResult | None = None, ransac_metrics: dict | None = None,
                 timings: bool = False) -> dict:
    """Assemble the report in its fixed key order; absent metrics are left out."""
    metrics = metrics or {}
    doc: dict = {
        "config": config.to_dict(),
        "influences": fit.influences,
        "model": {"x": fit.x, "F": fit.F},
        "consensus": fit.consensus,
    }
    for key in ("auc", "nsgd", "accurate"):
        if key in metrics:
            doc[key] = metrics[key]
    if ransac is not None:
        part: dict = {"consensus": ransac.consensus, "F": ransac.F}
        part.update({k: v for k, v in (ransac_metrics or {}).items() if k in ("auc", "nsgd", "accurate")})
        doc["ransac"] = part
    if timings:
        doc["timings"] = dict(fit.timings)
    return doc


def true_residuals(corrs: Correspondences, F_gt: np.ndarray, frame_scale: float) -> np.ndarray | None:
    """Linearised residuals to the ground-truth model, or None when ``F[0,0]`` is negligible."""
    frame = LinearFrame.for_correspondences(corrs, frame_scale)
    F_frame = np.linalg.inv(frame.T2).T @ np.asarray(F_gt, dtype=float) @ np.linalg.inv(frame.T1)
    if abs(F_frame[0, 0]) < 1e-6 * np.linalg.norm(F_frame):
        return None
    try:
        x = fundamental_to_model(F_frame)
    except DegeneracyError:
        return None
    return linearize(frame.apply(corrs)).residuals(x)


def write_point_csv(path: str | Path, influences, true_residual=None, labels=None) -> None:
    """``index,influence[,true_residual][,label]`` per point."""
    header = ["index", "influence"]
    cols = [np.asarray(influences, dtype=float)]
    if true_residual is not None:
        header.append("true_residual")
        cols.append(np.asarray(true_residual, dtype=float))
    if labels is not None:
        header.append("label")
        cols.append(np.asarray(labels))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(cols[0].size):
            row = [i]
            for c in cols:
                v = c[i]
                row.append(int(v) if c.dtype.kind in "iub" else f"{float(v):.{FLOAT_DIGITS}g}")
            w.writerow(row)
