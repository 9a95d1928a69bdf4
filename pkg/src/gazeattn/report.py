"""Report tables and their CSV / JSON emission.

CSV output is a pure function of the table contents, so identical runs give
byte-identical files. JSON carries the metadata block, including the
timestamp, plus a SHA-256 of the CSV bytes.
"""
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

NA = "n/a"


@dataclass
class ReportTable:
    title: str
    row_labels: list
    col_labels: list
    cells: list  # rows x cols of float or None ("n/a")
    metadata: dict = field(default_factory=dict)
    row_header: str = "baseline"

    def __post_init__(self):
        self.row_labels = [str(r) for r in self.row_labels]
        self.col_labels = [str(c) for c in self.col_labels]
        if len(self.cells) != len(self.row_labels):
            raise ValueError(f"table {self.title!r}: {len(self.cells)} rows for {len(self.row_labels)} labels")
        clean = []
        for r, row in zip(self.row_labels, self.cells):
            if len(row) != len(self.col_labels):
                raise ValueError(f"table {self.title!r}: row {r!r} has {len(row)} cells, expected {len(self.col_labels)}")
            out = []
            for v in row:
                if v is None or v == NA:
                    out.append(None)
                    continue
                v = float(v)
                out.append(v if math.isfinite(v) else None)
            clean.append(out)
        self.cells = clean

    @property
    def slug(self):
        return re.sub(r"[^a-z0-9]+", "-", self.title.lower()).strip("-")

    def cell(self, row, col):
        return self.cells[self.row_labels.index(row)][self.col_labels.index(col)]

    def column(self, col):
        j = self.col_labels.index(col)
        return {r: row[j] for r, row in zip(self.row_labels, self.cells)}

    def to_csv(self):
        def fmt(v):
            return NA if v is None else repr(v)

        lines = [",".join([self.row_header] + self.col_labels)]
        for r, row in zip(self.row_labels, self.cells):
            lines.append(",".join([r] + [fmt(v) for v in row]))
        return "\n".join(lines)

    def to_dict(self):
        return {
            "title": self.title,
            "row_header": self.row_header,
            "rows": self.row_labels,
            "columns": self.col_labels,
            "cells": [[NA if v is None else v for v in row] for row in self.cells],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["title"], d["rows"], d["columns"], d["cells"], d.get("metadata", {}), d.get("row_header", "baseline"))


def emit_report(tables, out_dir, formats=("csv", "json"), timestamp=None):
    """Write one file per table per format; returns the written paths in order."""
    unknown = set(formats) - {"csv", "json"}
    if unknown:
        raise ValueError(f"unknown report formats {sorted(unknown)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stamp = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    written = []
    seen = set()
    for t in tables:
        if t.slug in seen:
            raise ValueError(f"duplicate table title {t.title!r}")
        seen.add(t.slug)
        body = t.to_csv().encode("utf-8")
        if "csv" in formats:
            p = out / f"{t.slug}.csv"
            p.write_bytes(body)
            written.append(p)
        if "json" in formats:
            d = t.to_dict()
            d["metadata"] = dict(d["metadata"], timestamp=stamp)
            d["csv_sha256"] = hashlib.sha256(body).hexdigest()
            p = out / f"{t.slug}.json"
            p.write_text(json.dumps(d, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
            written.append(p)
    return written
