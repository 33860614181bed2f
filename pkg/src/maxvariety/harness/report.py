"""Run reports: metric tables, pass/fail flags and their serialization.

``report.json`` holds only quantities fixed by the config and seeds, so two
runs of the same config produce byte-identical files.  Wall-clock timings go
to a separate ``timing.json``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

SCHEMA_VERSION = 1
FORMATS = ("json", "csv", "markdown")


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)

    def add(self, **values):
        missing = [c for c in self.columns if c not in values]
        if missing:
            raise ValueError(f"row is missing columns {missing}")
        self.rows.append([values[c] for c in self.columns])


@dataclass
class Flag:
    name: str
    value: object
    threshold: object
    passed: bool
    status: str
    note: str = ""


def check(name, value, threshold, passed, note=""):
    """Flag helper; ``value=None`` means no data, which passes vacuously."""
    if value is None:
        return Flag(name, None, threshold, True, "no-data", note)
    passed = bool(passed)
    return Flag(name, value, threshold, passed, "pass" if passed else "fail", note)


@dataclass
class RunReport:
    scenario: str
    config_hash: str
    tables: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    failure: Optional[str] = None
    timing: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(f.passed for f in self.flags) and self.failure is None

    def flag(self, name):
        for f in self.flags:
            if f.name == name:
                return f
        raise KeyError(name)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            "config_hash": self.config_hash,
            "passed": self.passed,
            "failure": self.failure,
            "counts": self.counts,
            "flags": [f.__dict__ for f in self.flags],
            "tables": {name: {"columns": t.columns, "rows": t.rows}
                       for name, t in sorted(self.tables.items())},
        }

    @classmethod
    def from_dict(cls, data):
        tables = {name: Table(list(t["columns"]), [list(r) for r in t["rows"]])
                  for name, t in data["tables"].items()}
        flags = [Flag(**f) for f in data["flags"]]
        return cls(data["scenario"], data["config_hash"], tables, flags,
                   data.get("counts", {}), data.get("failure"))


def _plain(obj):
    """JSON-safe values: non-finite floats become strings, numpy scalars become Python ones."""
    if hasattr(obj, "item") and not isinstance(obj, (list, dict, str)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _fmt(value):
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def emit_report(report, fmt, out_dir):
    """Write the report in one format; returns the list of files written."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    os.makedirs(out_dir, exist_ok=True)
    if fmt == "json":
        path = os.path.join(out_dir, "report.json")
        with open(path, "w") as fh:
            json.dump(_plain(report.to_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return [path]
    if fmt == "csv":
        paths = []
        for name, table in sorted(report.tables.items()):
            path = os.path.join(out_dir, f"{name}.csv")
            with open(path, "w", newline="") as fh:
                fh.write(f"# schema_version={SCHEMA_VERSION}\n")
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(table.columns)
                for row in table.rows:
                    writer.writerow([_cell(_plain(v)) for v in row])
            paths.append(path)
        return paths
    path = os.path.join(out_dir, "summary.md")
    with open(path, "w") as fh:
        fh.write(_markdown(report))
    return [path]


def _markdown(report):
    lines = [f"# {report.scenario} run {report.config_hash[:12]}", "",
             f"Overall: **{'PASS' if report.passed else 'FAIL'}**", ""]
    if report.failure:
        lines += [f"Failure: {report.failure}", ""]
    lines += ["| check | measured | threshold | status | note |", "|---|---|---|---|---|"]
    for f in report.flags:
        lines.append(f"| {f.name} | {_fmt(f.value)} | {_fmt(f.threshold)} | {f.status} | {f.note} |")
    if report.counts:
        lines += ["", "| count | value |", "|---|---|"]
        lines += [f"| {k} | {v} |" for k, v in sorted(report.counts.items())]
    lines += ["", "Tables: " + (", ".join(f"{n} ({len(t.rows)} rows)"
                                         for n, t in sorted(report.tables.items())) or "none"), ""]
    return "\n".join(lines)


def write_timing(report, out_dir):
    path = os.path.join(out_dir, "timing.json")
    with open(path, "w") as fh:
        json.dump(_plain(report.timing), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_report(run_dir):
    with open(os.path.join(run_dir, "report.json")) as fh:
        return RunReport.from_dict(json.load(fh))
