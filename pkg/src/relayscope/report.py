"""Deterministic JSON and CSV output for analysis results."""
from __future__ import annotations

import csv
import io
import json
import sys
from pathlib import Path

SCHEMA_VERSION = 1


def _default(obj):
    if isinstance(obj, (set, frozenset)):
        return sorted(obj, key=str)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if hasattr(obj, "__dataclass_fields__"):
        return dict(obj.__dict__)
    return str(obj)


def to_json(result) -> str:
    if isinstance(result, dict) and "schema" not in result:
        result = {"schema": SCHEMA_VERSION, **result}
    return json.dumps(result, indent=1, sort_keys=True, default=_default) + "\n"


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def emit(text: str, path=None) -> None:
    """Write ``text`` to ``path``, or stdout when no path is given."""
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    Path(path).write_text(text)


def emit_report(result, fmt: str = "json", path=None, header=None) -> None:
    """``result`` is a JSON-able object, or CSV rows when ``fmt`` is csv."""
    if fmt == "json":
        emit(to_json(result), path)
    elif fmt == "csv":
        if header is None:
            raise ValueError("CSV output needs a header")
        emit(to_csv(header, result), path)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def percent(x: float) -> str:
    return f"{100 * x:.1f}%"
