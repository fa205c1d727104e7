"""Dual-form reports: an aligned text rendering and a JSON twin.

The JSON form is byte-deterministic for identical inputs and config; it
carries no timestamps or absolute paths.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import __version__

TOOL = "diler-eval"


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Table:
    name: str
    columns: list[tuple[str, str]]  # (key, header)
    rows: list[dict[str, Any]]
    digits: dict[str, int] = field(default_factory=dict)  # per-column text precision


@dataclass
class Report:
    command: str
    config: dict[str, Any]
    inputs: dict[str, str] = field(default_factory=dict)  # name -> "basename sha256:..."
    tables: list[Table] = field(default_factory=list)
    sections: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def add_input(self, name: str, path: str | Path | None) -> None:
        if path is None:
            return
        p = Path(path)
        self.inputs[name] = f"{p.name} sha256:{file_digest(p)}"

    def header(self) -> dict[str, Any]:
        return {"tool": TOOL, "version": __version__, "command": self.command,
                "config": self.config, "inputs": self.inputs}

    def to_dict(self) -> dict[str, Any]:
        return {
            "header": self.header(),
            "tables": [
                {"name": t.name, "columns": [k for k, _ in t.columns], "headers": [h for _, h in t.columns],
                 "rows": [_jsonable(r) for r in t.rows]}
                for t in self.tables
            ],
            "sections": _jsonable(self.sections),
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False, allow_nan=False) + "\n"

    def to_text(self) -> str:
        lines = [f"# {TOOL} {__version__} {self.command}"]
        for k, v in sorted(self.config.items()):
            lines.append(f"#   {k} = {json.dumps(v, ensure_ascii=False)}")
        for k, v in self.inputs.items():
            lines.append(f"#   input {k}: {v}")
        for t in self.tables:
            lines.append("")
            lines.append(f"## {t.name}")
            lines.extend(format_table(t.columns, t.rows, t.digits))
        for name, value in self.sections.items():
            lines.append("")
            lines.append(f"## {name}")
            lines.extend(_format_section(value))
        if self.warnings:
            lines.append("")
            lines.append("## warnings")
            lines.extend(f"- {w}" for w in self.warnings)
        return "\n".join(lines) + "\n"


def _jsonable(value: Any) -> Any:
    if isinstance(value, float):
        return None if not math.isfinite(value) else value
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def fmt(value: Any, digits: int = 4) -> str:
    if value is None:
        return "--"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def format_table(columns: Sequence[tuple[str, str]], rows: Sequence[dict[str, Any]],
                 digits: dict[str, int] | None = None) -> list[str]:
    digits = digits or {}
    cells = [[h for _, h in columns]] + [[fmt(r.get(k), digits.get(k, 4)) for k, _ in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    out = []
    for n, row in enumerate(cells):
        parts = [c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))]
        out.append("  ".join(parts).rstrip())
        if n == 0:
            out.append("  ".join("-" * w for w in widths))
    return out


def format_matrix(matrix: Sequence[Sequence[int]], row_labels: Sequence[str], col_labels: Sequence[str],
                  corner: str = "ref\\pred") -> list[str]:
    cols = [("label", corner)] + [(c, c) for c in col_labels]
    rows = [{"label": r, **{c: int(v) for c, v in zip(col_labels, vals)}} for r, vals in zip(row_labels, matrix)]
    return format_table(cols, rows)


def _format_section(value: Any) -> list[str]:
    if isinstance(value, dict) and "matrix" in value and "rows" in value and "cols" in value:
        return format_matrix(value["matrix"], value["rows"], value["cols"])
    if isinstance(value, dict):
        return [f"{k}: {json.dumps(_jsonable(v), ensure_ascii=False)}" for k, v in value.items()]
    if isinstance(value, list):
        return [f"- {json.dumps(_jsonable(v), ensure_ascii=False)}" for v in value]
    return [str(value)]
