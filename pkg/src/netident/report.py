"""Output files: key/value summaries, tab-separated tables, signal files and figures.

Machine-readable layout (schema version 1) in an output directory:

* ``summary.kv``  one ``key = value`` per line, first line ``schema_version = 1``
* ``<table>.tsv`` tab-separated, one header line of column names
* ``report.txt``  human-readable text
* ``<figure>.png`` figures rendered from the tables

Floats are written with 12 significant digits, so identical inputs give
byte-identical files.  An empty table is written as its header line only.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .network import SignalRecord

__all__ = [
    "REPORT_SCHEMA_VERSION",
    "SIGNAL_FORMAT",
    "Table",
    "Report",
    "ReportError",
    "emit_report",
    "format_value",
    "write_table",
    "read_table",
    "write_signals",
    "read_signals",
]

REPORT_SCHEMA_VERSION = 1
SIGNAL_FORMAT = "netident-signals 1"


class ReportError(OSError):
    pass


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.12g}"
    if x is None:
        return ""
    if isinstance(x, (list, tuple, set, frozenset)):
        items = sorted(x) if isinstance(x, (set, frozenset)) else x
        return "[" + ", ".join(format_value(v) for v in items) + "]"
    return str(x).replace("\t", " ").replace("\n", " ")


@dataclass
class Table:
    columns: list[str]
    rows: list[tuple] = field(default_factory=list)

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, table has {len(self.columns)} columns")
        self.rows.append(tuple(row))

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]

    def render(self) -> str:
        lines = ["\t".join(self.columns)]
        lines += ["\t".join(format_value(v) for v in r) for r in self.rows]
        return "\n".join(lines) + "\n"


@dataclass
class Report:
    """Everything one command emits."""

    command: str
    values: dict = field(default_factory=dict)
    tables: dict[str, Table] = field(default_factory=dict)
    text: list[str] = field(default_factory=list)
    figures: dict[str, Callable] = field(default_factory=dict)   # name -> fn(report, path)

    def render_kv(self) -> str:
        lines = [f"schema_version = {REPORT_SCHEMA_VERSION}", f"command = {self.command}"]
        lines += [f"{k} = {format_value(v)}" for k, v in self.values.items()]
        return "\n".join(lines) + "\n"

    def render_text(self) -> str:
        return "\n".join(self.text) + ("\n" if self.text else "")


def _write(path: Path, text: str):
    try:
        path.write_text(text)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc.strerror}") from None


def emit_report(report: Report, out_dir, figures: bool = True) -> list[Path]:
    """Write the report into ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise ReportError(f"output directory {out} is not writable")
    written = []
    p = out / "summary.kv"
    _write(p, report.render_kv())
    written.append(p)
    p = out / "report.txt"
    _write(p, report.render_text())
    written.append(p)
    for name, table in report.tables.items():
        p = out / f"{name}.tsv"
        _write(p, table.render())
        written.append(p)
    if figures:
        for name, fn in report.figures.items():
            p = out / f"{name}.png"
            try:
                fn(report, p)
            except OSError as exc:
                raise ReportError(f"cannot write {p}: {exc}") from None
            written.append(p)
    return written


def write_table(table: Table, path) -> None:
    _write(Path(path), table.render())


def read_table(path) -> Table:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty table file")
    cols = lines[0].split("\t")
    return Table(cols, [tuple(l.split("\t")) for l in lines[1:] if l])


# -- signal files ----------------------------------------------------------------

def write_signals(record: SignalRecord, path) -> None:
    """Columnar text: a format line, a tab-separated header, one row per sample."""
    names = record.names
    data = np.column_stack([record[k] for k in names]) if names else np.zeros((0, 0))
    with open(path, "w") as fh:
        fh.write(f"# {SIGNAL_FORMAT}\n")
        fh.write("\t".join(names) + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter="\t")


def read_signals(path) -> SignalRecord:
    p = Path(path)
    try:
        with open(p) as fh:
            first = fh.readline().strip()
            header = fh.readline().rstrip("\n")
    except OSError as exc:
        raise ValueError(f"{p}: cannot read signal file: {exc.strerror}") from None
    if first != f"# {SIGNAL_FORMAT}":
        raise ValueError(f"{p}:1: not a signal file (expected '# {SIGNAL_FORMAT}')")
    names = header.split("\t")
    if not header or len(set(names)) != len(names):
        raise ValueError(f"{p}:2: malformed channel header")
    data = np.loadtxt(p, skiprows=2, delimiter="\t", ndmin=2)
    if data.size and data.shape[1] != len(names):
        raise ValueError(f"{p}: rows have {data.shape[1]} fields, header names {len(names)} channels")
    if data.size == 0:
        data = np.zeros((0, len(names)))
    return SignalRecord({k: data[:, n] for n, k in enumerate(names)})
