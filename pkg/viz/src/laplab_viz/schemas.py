"""Parsers for the training-lab artifact formats, with field-level errors.

Inputs are the primary package's documented interchange files: metrics
JSON-lines, landscape-grid CSV, spectra CSV, and the prune-sweep report.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

METRIC_KEYS = ("epoch", "lr", "train_loss", "nat_acc", "fgsm_acc", "pgd_acc", "wall_s")


class SchemaError(ValueError):
    """Input does not match the documented artifact schema."""

    def __init__(self, path, field, message):
        super().__init__(f"{path}: field {field!r}: {message}")
        self.field = field


def load_metrics(path) -> list[dict]:
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(path, f"line {lineno}", f"invalid JSON: {e.msg}") from None
            for key in METRIC_KEYS:
                if key not in obj:
                    raise SchemaError(path, key, f"missing on line {lineno}")
                if not isinstance(obj[key], (int, float)):
                    raise SchemaError(path, key, f"non-numeric on line {lineno}")
            records.append(obj)
    if not records:
        raise SchemaError(path, "epoch", "no records")
    return records


def load_grid(path):
    with open(path) as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["a", "b", "delta_loss"]:
            raise SchemaError(path, "header", f'expected "a,b,delta_loss", got {header}')
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise SchemaError(path, f"line {lineno}", "expected 3 columns")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise SchemaError(path, f"line {lineno}", "non-numeric value") from None
    if not rows:
        raise SchemaError(path, "a", "no grid points")
    arr = np.asarray(rows)
    a = np.unique(arr[:, 0])
    b = np.unique(arr[:, 1])
    if len(a) * len(b) != len(arr):
        raise SchemaError(path, "a", "rows do not form a full (a, b) grid")
    values = np.full((len(a), len(b)), np.nan)
    ai = np.searchsorted(a, arr[:, 0])
    bi = np.searchsorted(b, arr[:, 1])
    values[ai, bi] = arr[:, 2]
    return a, b, values


def load_spectra(path) -> dict[int, np.ndarray]:
    with open(path) as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["ordinal", "rank", "sigma"]:
            raise SchemaError(path, "header", f'expected "ordinal,rank,sigma", got {header}')
        by_ordinal: dict[int, list] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise SchemaError(path, f"line {lineno}", "expected 3 columns")
            try:
                ordinal, rank, sigma = int(row[0]), int(row[1]), float(row[2])
            except ValueError:
                raise SchemaError(path, f"line {lineno}", "bad ordinal/rank/sigma") from None
            by_ordinal.setdefault(ordinal, []).append((rank, sigma))
    if not by_ordinal:
        raise SchemaError(path, "ordinal", "no spectra rows")
    out = {}
    for ordinal, pairs in by_ordinal.items():
        pairs.sort()
        out[ordinal] = np.array([s for _, s in pairs])
    return out


def load_prune_report(path) -> dict:
    try:
        report = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(path, "json", e.msg) from None
    for field in ("epsilon", "base", "sweep"):
        if field not in report:
            raise SchemaError(path, field, "missing")
    for i, row in enumerate(report["sweep"]):
        for field in ("rate", "nat_acc", "fgsm_acc", "pgd_acc"):
            if field not in row:
                raise SchemaError(path, field, f"missing in sweep[{i}]")
    return report
