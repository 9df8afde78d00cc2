"""Deterministic CSV and JSON artifacts.

CSV files start with ``#`` lines carrying the command, the seed and the
configuration (one compact JSON line), then a header row.  Floats are written
with 17 significant digits so values round-trip exactly.  No timestamps or
host details are recorded, so reruns produce identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .config import HEADER_CONFIG, ExperimentConfig


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".16e")
    return str(v)


def header_lines(command, config: ExperimentConfig):
    return [f"# command: {command}", f"# seed: {config.seed}", HEADER_CONFIG + config.header_json()]


def write_csv(path, command, config: ExperimentConfig, columns, rows):
    buf = io.StringIO()
    for line in header_lines(command, config):
        buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, command, config: ExperimentConfig, payload):
    doc = {"command": command, "seed": config.seed, "config": config.reproducible_doc()}
    doc.update(payload)
    Path(path).write_text(json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_csv(path):
    """``(comments, columns, rows)`` of an artifact; values stay strings."""
    comments, body = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        (comments if line.startswith("#") else body).append(line)
    reader = list(csv.reader(body))
    return comments, reader[0], reader[1:]
