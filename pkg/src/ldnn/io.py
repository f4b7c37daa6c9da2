"""CSV/JSON output with embedded provenance, written atomically.

Every CSV starts with one ``# {...}`` line holding a JSON header (tool,
version, schema, file kind, config hash and run metadata), followed by a
fixed column header. Floats are written with 17 significant digits so that
files round-trip exactly and repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence

from ldnn import TOOL_NAME, __version__

SCHEMA_VERSION = 1

COLUMNS = {
    "trials": ("trial", "t", "metric_name", "value"),
    "agg": ("t", "metric_name", "median", "p25", "p75"),
    "pred": ("t", "gamma", "beta", "tau", "metric_name", "predicted_value", "mc_stderr"),
    "tune": ("lambda", "t", "metric_name", "predicted_value", "mc_stderr"),
    "sweep": ("axis", "value", "lambda", "t", "gamma", "beta", "tau", "metric_name",
              "predicted_value", "mc_stderr", "median", "p25", "p75"),
}


def fmt(x: Any) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def header(kind: str, config_hash: str | None, extra: dict[str, Any] | None = None) -> dict[str, Any]:
    """Header document; the identifying fields win over anything in ``extra``."""
    head = dict(extra or {})
    head.update({"tool": TOOL_NAME, "version": __version__, "schema": SCHEMA_VERSION, "kind": kind,
                 "config_hash": config_hash})
    return head


def write_csv(path: str | Path, kind: str, rows: Iterable[Sequence[Any]], head: dict[str, Any]) -> None:
    buf = io.StringIO()
    buf.write("# " + json.dumps(head, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS[kind])
    for row in rows:
        writer.writerow([fmt(x) for x in row])
    atomic_write_text(path, buf.getvalue())


def write_json(path: str | Path, doc: dict[str, Any]) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_csv(path: str | Path) -> tuple[dict[str, Any], list[dict[str, str]]]:
    """Return (header, rows); rows are dicts keyed by column name."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ValueError(f"{path}: missing provenance header line")
    head = json.loads(lines[0][2:])
    if head.get("tool") != TOOL_NAME:
        raise ValueError(f"{path}: not written by {TOOL_NAME}")
    if head.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema {head.get('schema')!r}")
    reader = csv.DictReader(lines[1:])
    expected = COLUMNS.get(head.get("kind"))
    if expected is not None and tuple(reader.fieldnames or ()) != expected:
        raise ValueError(f"{path}: columns {reader.fieldnames} do not match schema {expected}")
    return head, list(reader)
