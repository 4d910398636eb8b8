"""Report assembly and serialization (JSON / CSV)."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path

from . import __version__
from .errors import ValidationError

SCHEMA_VERSION = 1
TOOL = f"geohard {__version__}"


def _clean(obj):
    """Make a structure JSON-safe: numpy scalars to Python, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "tolist") and not isinstance(obj, (str, bytes)):
        return _clean(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def new_report(config: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, "tool": TOOL, "config": _clean(config), "datasets": []}


def dataset_entry(name: str, hardness_report=None, classes=None) -> dict:
    entry = {"name": name}
    if hardness_report is not None:
        d = hardness_report.to_dict()
        entry["classes"] = d["classes"]
        entry["hardness"] = d["hardness"]
        entry["baselines"] = d["baselines"]
        entry["metadata"] = d["metadata"]
    else:
        entry["classes"] = list(classes or [])
        entry["hardness"] = {}
        entry["baselines"] = {}
        entry["metadata"] = {}
    entry["correlations"] = {}
    return entry


def csv_rows(report: dict) -> list[list]:
    rows = []
    for ds in report.get("datasets", []):
        classes = ds.get("classes", [])
        tables = {**ds.get("hardness", {}), **ds.get("baselines", {})}
        for metric, values in tables.items():
            if len(values) != len(classes):
                raise ValidationError(f"{ds['name']}/{metric}: {len(values)} values for {len(classes)} classes")
            for c, v in zip(classes, values):
                rows.append([ds["name"], c, metric, v])
    return rows


def render_report(report: dict, format: str = "json") -> str:
    if format == "json":
        return json.dumps(_clean(report), indent=2, ensure_ascii=False, allow_nan=False) + "\n"
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "class", "metric", "value"])
        for row in csv_rows(report):
            w.writerow([row[0], row[1], row[2], "" if row[3] is None else repr(float(row[3]))])
        return buf.getvalue()
    raise ValidationError(f"unknown report format {format!r}")


def emit_report(report: dict, format: str, path: str | os.PathLike) -> None:
    """Serialize ``report`` to ``path`` atomically; equal inputs give equal bytes."""
    text = render_report(report, format)
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        tmp.write_text(text, encoding="utf-8", newline="\n")
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def load_report(path: str | os.PathLike) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"{path}: unsupported report schema_version {data.get('schema_version')!r}")
    return data
