"""Deterministic CSV writers and readers.

Numbers are written with 9 significant digits, ``.`` as decimal separator
and ``\\n`` line endings, so identical runs give byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .errors import DomainError

TRACE_HEADER = "time_s,relative_emission"
SWEEP_HEADER = "axis,value,metric"


def fmt(x):
    return format(float(x), ".9g")


def params_record(params):
    """Flat, JSON-ready dict of every ModelParams field."""
    return json.loads(json.dumps(dataclasses.asdict(params)))


def _meta_lines(metadata):
    lines = []
    for key, value in metadata.items():
        lines.append(f"# {key}: {json.dumps(value, sort_keys=True)}")
    return lines


def _write(path, lines):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def write_trace_csv(path, times, values, metadata=None):
    lines = _meta_lines(metadata or {})
    lines.append(TRACE_HEADER)
    lines += [f"{fmt(t)},{fmt(v)}" for t, v in zip(times, values)]
    return _write(path, lines)


def read_trace_csv(path):
    """Return (times, values) from a ``time_s,relative_emission`` file."""
    times, values = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#") or text == TRACE_HEADER:
                continue
            parts = text.split(",")
            if len(parts) != 2:
                raise DomainError(f"{path}:{lineno}: expected 2 columns")
            try:
                times.append(float(parts[0]))
                values.append(float(parts[1]))
            except ValueError:
                raise DomainError(f"{path}:{lineno}: non-numeric value") from None
    if not times:
        raise DomainError(f"{path}: no data rows")
    return np.array(times), np.array(values)


def write_sweep_csv(path, result, extra_metadata=None):
    """SweepResult as ``axis,value,metric`` rows preceded by ``#`` metadata.

    ``axis`` holds the axis name, ``value`` the axis coordinate and
    ``metric`` the result at that point.
    """
    metadata = {"metric": result.metric_name}
    metadata.update(extra_metadata or {})
    for i, params in enumerate(result.params):
        metadata[f"params[{i}]"] = params_record(params)
    lines = _meta_lines(metadata)
    lines.append(SWEEP_HEADER)
    lines += [f"{result.axis_name},{fmt(a)},{fmt(m)}" for a, m in zip(result.axis, result.metric)]
    return _write(path, lines)


def read_sweep_csv(path):
    """Return (axis_name, axis, metric, metadata) from a sweep file."""
    axis_name, axis, metric, metadata = None, [], [], {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            text = line.rstrip("\n")
            if text.startswith("# "):
                key, _, raw = text[2:].partition(": ")
                metadata[key] = json.loads(raw)
            elif text and text != SWEEP_HEADER:
                name, a, m = text.split(",")
                axis_name = name
                axis.append(float(a))
                metric.append(float(m))
    return axis_name, np.array(axis), np.array(metric), metadata


def write_table_csv(path, header, rows, metadata=None):
    """Generic table; floats formatted like every other output."""
    lines = _meta_lines(metadata or {})
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    return _write(path, lines)
