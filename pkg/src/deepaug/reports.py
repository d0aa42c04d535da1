"""CSV (canonical) and JSON (mirror) report writers.

Column orders are fixed and part of the external interface.
"""
import csv
import json
import math
from pathlib import Path

import numpy as np

METRICS_COLUMNS = ("epoch", "loss", "probe_coarse", "probe_fine", "alignment", "uniformity")
ALIGN_UNIFORM_COLUMNS = ("alignment", "uniformity", "n", "alpha", "t")
PROBE_COLUMNS = ("coarse_acc", "fine_acc", "probe_config_hash")


def fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_table(path, columns, rows, write_json=False) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row[c]) for c in columns])
    if write_json:
        data = [{c: _json_value(row[c]) for c in columns} for row in rows]
        path.with_suffix(".json").write_text(json.dumps(data, indent=1) + "\n")


def read_table(path) -> list:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_metrics(path, records, write_json=False) -> None:
    rows = [{c: getattr(r, c) for c in METRICS_COLUMNS} for r in records]
    write_table(path, METRICS_COLUMNS, rows, write_json)


def write_cka(path, matrix, layers, write_json=False) -> None:
    """Square matrix with layer-index header row and first column."""
    path = Path(path)
    layers = [str(l) for l in layers]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", *layers])
        for name, row in zip(layers, matrix):
            w.writerow([name, *(fmt(float(v)) for v in row)])
    if write_json:
        data = {"layers": [int(l) for l in layers],
                "cka": [[_json_value(float(v)) for v in row] for row in matrix]}
        path.with_suffix(".json").write_text(json.dumps(data, indent=1) + "\n")


def read_cka(path):
    rows = list(csv.reader(Path(path).open(newline="")))
    layers = [int(v) for v in rows[0][1:]]
    return layers, np.array([[float(v) for v in r[1:]] for r in rows[1:]])
