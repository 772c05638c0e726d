"""Correlation tables, radar charts and run summaries."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from xml.sax.saxutils import escape, quoteattr

from .errors import EmptyReport, SummaryInvariantError, TooFewAxes
from .metrics import CorrelationReport
from .principles import PRINCIPLES, Principle

METRICS = ("plcc", "srocc")
RADAR_MIN = -0.2
RADAR_MAX = 1.0
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def _fmt(value: float | None) -> str:
    if value is None:
        return ""
    text = f"{value:.2f}"
    return "0.00" if text == "-0.00" else text


def quantize(value: float | None) -> float | None:
    return None if value is None else float(_fmt(value))


def _pick_method(report: CorrelationReport, method: str | None) -> str:
    methods = report.methods
    if not methods:
        raise EmptyReport("report has no cells")
    if method is None:
        return methods[0]
    if method not in methods:
        raise EmptyReport(f"report has no cells for method {method!r}")
    return method


def _columns(report: CorrelationReport, method: str) -> list[tuple[str, str, list[float | None]]]:
    cols = []
    for cat in report.categories:
        for metric in METRICS:
            values = []
            for p in PRINCIPLES:
                cell = report.cell(cat, p, method)
                values.append(quantize(getattr(cell, metric)) if cell else None)
            cols.append((cat, metric, values))
    return cols


def emit_table(report: CorrelationReport, fmt: str = "markdown", method: str | None = None) -> str:
    """Principles as rows, a (PLCC, SROCC) column pair per category.

    Values are rounded to two decimals. In markdown the largest value of
    each column is bold (every tied maximum is bold).
    """
    method = _pick_method(report, method)
    cols = _columns(report, method)
    if not cols:
        raise EmptyReport("report has no categories")
    headers = ["Law/Concept"] + [f"{cat} {metric.upper()}" for cat, metric, _ in cols]

    if fmt == "csv":
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(headers)
        for row, p in enumerate(PRINCIPLES):
            writer.writerow([p.label] + [_fmt(values[row]) for _, _, values in cols])
        return out.getvalue()

    if fmt != "markdown":
        raise ValueError(f"unknown table format {fmt!r}")
    best = []
    for _, _, values in cols:
        present = [v for v in values if v is not None]
        best.append(max(present) if present else None)
    lines = [
        "| " + " | ".join(headers) + " |",
        "|" + "|".join([":---"] + [":---:"] * len(cols)) + "|",
    ]
    for row, p in enumerate(PRINCIPLES):
        cells = []
        for (_, _, values), top in zip(cols, best):
            v = values[row]
            if v is None:
                cells.append("n/a")
            elif v == top:
                cells.append(f"**{_fmt(v)}**")
            else:
                cells.append(_fmt(v))
        lines.append(f"| {p.label} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def parse_table_csv(text: str) -> dict[tuple[str, Principle, str], float | None]:
    """Read back a CSV table as {(category, principle, metric): value}."""
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    out: dict[tuple[str, Principle, str], float | None] = {}
    for row in body:
        p = Principle.from_label(row[0])
        for name, raw in zip(header[1:], row[1:]):
            cat, metric = name.rsplit(" ", 1)
            out[(cat, p, metric.lower())] = float(raw) if raw else None
    return out


def bold_cells(markdown: str) -> set[tuple[str, str]]:
    """(row label, column header) of every bold value in a markdown table."""
    lines = [l for l in markdown.splitlines() if l.startswith("|")]
    header = [h.strip() for h in lines[0].strip("|").split("|")]
    marked = set()
    for line in lines[2:]:
        cells = [c.strip() for c in line.strip("|").split("|")]
        for name, cell in zip(header[1:], cells[1:]):
            if cell.startswith("**"):
                marked.add((cells[0], name))
    return marked


# --- radar ------------------------------------------------------------------------

_SIZE = (720, 560)
_CENTER = (280.0, 290.0)
_RADIUS = 200.0


def radial_position(value: float) -> float:
    """Distance from the centre for a (clamped) correlation value."""
    v = min(RADAR_MAX, max(RADAR_MIN, value))
    return _RADIUS * (v - RADAR_MIN) / (RADAR_MAX - RADAR_MIN)


def _point(axis: int, n_axes: int, r: float) -> tuple[float, float]:
    theta = -math.pi / 2 + 2 * math.pi * axis / n_axes
    return _CENTER[0] + r * math.cos(theta), _CENTER[1] + r * math.sin(theta)


def _xy(pt: tuple[float, float]) -> str:
    return f"{pt[0]:.2f},{pt[1]:.2f}"


def emit_radar(report: CorrelationReport, metric: str = "srocc", method: str | None = None) -> str:
    """SVG radar chart: one axis per principle, one closed polygon per category."""
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    method = _pick_method(report, method)
    axes = [p for p in PRINCIPLES if any(report.cell(c, p, method) for c in report.categories)]
    if len(axes) < 3:
        raise TooFewAxes(f"a radar chart needs at least 3 principles, report has {len(axes)}")
    k = len(axes)
    w, h = _SIZE
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" '
        'font-family="Helvetica, Arial, sans-serif" font-size="12">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{_CENTER[0]:.2f}" y="28" text-anchor="middle" font-size="16" class="title">'
        f'{escape(report.dataset)}: {metric.upper()} ({escape(method)})</text>',
    ]
    rings = [round(RADAR_MIN + 0.2 * s, 1) for s in range(1, 7)]
    for level in rings:
        pts = " ".join(_xy(_point(a, k, radial_position(level))) for a in range(k))
        dash = ' stroke-dasharray="4 3"' if level == 0 else ""
        out.append(f'<polygon class="ring" points="{pts}" fill="none" stroke="#cccccc"{dash}/>')
        lx, ly = _point(0, k, radial_position(level))
        out.append(f'<text class="ring-label" x="{lx + 4:.2f}" y="{ly - 2:.2f}" fill="#888888" font-size="10">{level:.1f}</text>')
    for a, p in enumerate(axes):
        ex, ey = _point(a, k, _RADIUS)
        out.append(f'<line class="axis" x1="{_CENTER[0]:.2f}" y1="{_CENTER[1]:.2f}" x2="{ex:.2f}" y2="{ey:.2f}" stroke="#999999"/>')
        tx, ty = _point(a, k, _RADIUS + 18)
        anchor = "middle" if abs(tx - _CENTER[0]) < 1 else ("start" if tx > _CENTER[0] else "end")
        out.append(f'<text class="axis-label" x="{tx:.2f}" y="{ty + 4:.2f}" text-anchor="{anchor}">{escape(p.label)}</text>')

    clamped = missing = 0
    for s, cat in enumerate(report.categories):
        colour = PALETTE[s % len(PALETTE)]
        values = []
        for p in axes:
            cell = report.cell(cat, p, method)
            v = getattr(cell, metric) if cell else None
            if v is None:
                missing += 1
                v = RADAR_MIN
            elif not RADAR_MIN <= v <= RADAR_MAX:
                clamped += 1
            values.append(v)
        pts = " ".join(_xy(_point(a, k, radial_position(v))) for a, v in enumerate(values))
        data = ",".join(f"{v:.4f}" for v in values)
        out.append(
            f'<polygon class="series" data-category={quoteattr(cat)} data-values="{data}" points="{pts}" '
            f'fill="{colour}" fill-opacity="0.12" stroke="{colour}" stroke-width="2"/>'
        )
        ly = 70 + 22 * s
        out.append(f'<g class="legend-entry"><rect x="540" y="{ly - 10}" width="14" height="14" fill="{colour}"/>'
                   f'<text x="560" y="{ly + 1}">{escape(cat)}</text></g>')

    note = f"values clamped to [{RADAR_MIN:.2f}, {RADAR_MAX:.2f}] for display"
    if clamped:
        note += f"; {clamped} point(s) clipped"
    if missing:
        note += f"; {missing} undefined cell(s) drawn at the centre"
    out.append(f'<text class="clamp-note" x="20" y="{h - 14}" fill="#555555" font-size="11">{escape(note)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --- run summary ------------------------------------------------------------------


@dataclass
class CategoryCounts:
    scheduled: int = 0
    judged: int = 0
    cached: int = 0
    failed: int = 0
    skipped: int = 0


@dataclass
class RunSummary:
    dataset: str
    schedule_mode: str
    judge_backend: str
    model_id: str
    config_hash: str
    order_balanced: bool = False
    categories: dict[str, CategoryCounts] = field(default_factory=dict)
    backend_calls: int = 0
    wall_time_s: float = 0.0

    def totals(self) -> CategoryCounts:
        total = CategoryCounts()
        for c in self.categories.values():
            for name in ("scheduled", "judged", "cached", "failed", "skipped"):
                setattr(total, name, getattr(total, name) + getattr(c, name))
        return total

    def check(self) -> None:
        for cat, c in self.categories.items():
            if c.judged + c.failed + c.skipped != c.scheduled:
                raise SummaryInvariantError(
                    f"category {cat!r}: judged {c.judged} + failed {c.failed} + skipped {c.skipped}"
                    f" != scheduled {c.scheduled}"
                )
            if c.cached > c.judged:
                raise SummaryInvariantError(f"category {cat!r}: cached {c.cached} exceeds judged {c.judged}")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["totals"] = asdict(self.totals())
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunSummary":
        doc = dict(doc)
        doc.pop("totals", None)
        cats = {k: CategoryCounts(**v) for k, v in doc.pop("categories", {}).items()}
        return cls(categories=cats, **doc)


def emit_summary(summary: RunSummary) -> str:
    summary.check()
    return json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n"

