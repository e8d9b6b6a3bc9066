"""Plot specification and CSV intake.

The toolkit's CSVs are plain UTF-8 with a mandatory header, ``.`` decimals,
and LF line endings. ``load_rows`` reads one or more such files into a list
of per-row dicts, insisting that every file carries the same header and
that at least one data row exists overall.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence


class PlotError(Exception):
    """Invalid plot request: bad columns, empty input, unusable values."""


@dataclass(frozen=True)
class PlotSpec:
    """What to draw: which CSVs, which columns, and where to write.

    ``mode`` is "line" (one polyline per ``group`` value) or "heatmap"
    (``x``/``y`` name the two axis columns, ``value`` the cell column).
    ``out`` names either image; its sibling with the other extension is
    always written too.
    """

    csv_paths: tuple[str, ...]
    x: str
    y: str
    out: str
    group: Optional[str] = None
    value: Optional[str] = None
    mode: str = "line"
    log_y: bool = False
    title: Optional[str] = None

    def __post_init__(self):
        if not self.csv_paths:
            raise PlotError("no input CSV given")
        if self.mode not in ("line", "heatmap"):
            raise PlotError(f"unknown mode {self.mode!r} (line or heatmap)")
        if self.mode == "heatmap" and not self.value:
            raise PlotError("heatmap mode needs a value column")
        if not (self.out.endswith(".png") or self.out.endswith(".svg")):
            raise PlotError("output path must end in .png or .svg")

    def columns_used(self) -> list[str]:
        cols = [self.x, self.y]
        if self.group:
            cols.append(self.group)
        if self.mode == "heatmap" and self.value:
            cols.append(self.value)
        return cols


def load_rows(spec: PlotSpec) -> list[dict]:
    """Rows from all of the spec's CSVs, with the spec's columns verified."""
    header: Optional[list[str]] = None
    rows: list[dict] = []
    for path in spec.csv_paths:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            try:
                this_header = next(reader)
            except StopIteration:
                raise PlotError(f"empty input: {path} has no header") from None
            if header is None:
                header = this_header
            elif this_header != header:
                raise PlotError(
                    f"{path} header {this_header} does not match {header}"
                )
            for raw in reader:
                if len(raw) != len(header):
                    raise PlotError(
                        f"{path}: row has {len(raw)} fields, header has {len(header)}"
                    )
                rows.append(dict(zip(header, raw)))
    assert header is not None
    for col in spec.columns_used():
        if col not in header:
            raise PlotError(
                f"column {col!r} not in CSV header (have: {', '.join(header)})"
            )
    if not rows:
        raise PlotError("empty input: no data rows")
    return rows


def numeric(rows: Sequence[dict], col: str) -> list[float]:
    out = []
    for i, row in enumerate(rows):
        try:
            out.append(float(row[col]))
        except ValueError:
            raise PlotError(
                f"column {col!r} has a non-numeric value {row[col]!r} (row {i + 1})"
            ) from None
    return out
