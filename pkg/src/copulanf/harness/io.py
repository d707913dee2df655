"""Plain-text artifacts: CSV tables, parameter files, JSON manifests.

Floats are written with ``repr`` so every table round-trips bit-for-bit.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..flow import Flow

PARAMS_MAGIC = "# copulanf-params v1"


class LayoutError(ValueError):
    """Parameter file does not match the configured flow layout."""


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, header, rows, comment: str | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path):
    """Rows as dicts of strings; ``#`` comment lines are skipped."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def read_comment(path) -> str | None:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    return first[2:].rstrip("\n") if first.startswith("# ") else None


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_params(path, flow: Flow):
    """Header line with the layer layout, then one parameter per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    layout = " ".join(f"{k}={v}" for k, v in flow.layout.items())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{PARAMS_MAGIC} {layout} n_params={flow.n_params}\n")
        for v in flow.params:
            fh.write(repr(float(v)) + "\n")


def read_params(path, expected: Flow | None = None) -> Flow:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        body = [ln for ln in fh if ln.strip()]
    if not header.startswith(PARAMS_MAGIC):
        raise LayoutError(f"{path}: not a parameter file")
    fields = dict(kv.split("=", 1) for kv in header[len(PARAMS_MAGIC):].split())
    try:
        dim, hidden, layers = int(fields["dim"]), int(fields["hidden"]), int(fields["layers"])
        n_params = int(fields["n_params"])
    except (KeyError, ValueError) as exc:
        raise LayoutError(f"{path}: incomplete layout header") from exc
    if fields.get("permutation") != "reverse":
        raise LayoutError(f"{path}: unsupported permutation {fields.get('permutation')!r}")
    if len(body) != n_params:
        raise LayoutError(f"{path}: header declares {n_params} parameters, found {len(body)}")
    if expected is not None and (dim, hidden, layers) != (expected.dim, expected.hidden, expected.n_layers):
        raise LayoutError(
            f"{path}: layout dim={dim} hidden={hidden} layers={layers} does not match "
            f"dim={expected.dim} hidden={expected.hidden} layers={expected.n_layers}"
        )
    try:
        return Flow(np.array([float(v) for v in body]), dim, hidden, layers)
    except ValueError as exc:
        raise LayoutError(f"{path}: {exc}") from exc
