"""PLCC / SROCC between principle scores and human complexity ratings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .aggregate import ScoreVector
from .dataset import DatasetIndex
from .errors import ConstantVector, LengthMismatch, MetricError, NoLabeledItems, TooFewSamples
from .principles import Principle

MIN_SAMPLES = 3


def _check(x: Sequence[float], y: Sequence[float]) -> None:
    if len(x) != len(y):
        raise LengthMismatch(f"vectors differ in length: {len(x)} vs {len(y)}")
    if len(x) < MIN_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_SAMPLES} samples, got {len(x)}")


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    _check(x, y)
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [a - mx for a in x]
    dy = [b - my for b in y]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise ConstantVector("correlation is undefined for a constant vector")
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    r = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the mean of the positions they span."""
    order = sorted(range(len(values)), key=lambda k: values[k])
    ranks = [0.0] * len(values)
    start = 0
    while start < len(order):
        stop = start
        while stop + 1 < len(order) and values[order[stop + 1]] == values[order[start]]:
            stop += 1
        shared = (start + stop) / 2 + 1
        for k in order[start:stop + 1]:
            ranks[k] = shared
        start = stop + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    _check(x, y)
    return pearson(average_ranks(x), average_ranks(y))


@dataclass(frozen=True)
class Cell:
    plcc: float | None
    srocc: float | None
    n: int
    # "ok", "insufficient" (n < 3) or "undefined" (a constant vector)
    status: str = "ok"


@dataclass
class CorrelationReport:
    dataset: str
    categories: list[str] = field(default_factory=list)
    cells: dict[tuple[str, Principle, str], Cell] = field(default_factory=dict)

    @property
    def methods(self) -> list[str]:
        seen: list[str] = []
        for _, _, m in self.cells:
            if m not in seen:
                seen.append(m)
        return seen

    @property
    def principles(self) -> list[Principle]:
        present = {p for _, p, _ in self.cells}
        return [p for p in Principle if p in present]

    def cell(self, category: str, principle: Principle, method: str) -> Cell | None:
        return self.cells.get((category, principle, method))

    def set(self, category: str, principle: Principle, method: str, cell: Cell) -> None:
        if category not in self.categories:
            self.categories.append(category)
        self.cells[(category, principle, method)] = cell

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "categories": list(self.categories),
            "cells": [
                {
                    "category": c,
                    "principle": p.value,
                    "method": m,
                    "plcc": cell.plcc,
                    "srocc": cell.srocc,
                    "n": cell.n,
                    "status": cell.status,
                }
                for (c, p, m), cell in self.cells.items()
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CorrelationReport":
        report = cls(dataset=doc["dataset"], categories=list(doc.get("categories", [])))
        for c in doc["cells"]:
            report.set(
                c["category"],
                Principle(c["principle"]),
                c["method"],
                Cell(c["plcc"], c["srocc"], int(c["n"]), c.get("status", "ok")),
            )
        return report


def correlate(scores: Sequence[float], truth: Sequence[float]) -> Cell:
    n = len(scores)
    if n < MIN_SAMPLES:
        return Cell(None, None, n, "insufficient")
    try:
        return Cell(pearson(scores, truth), spearman(scores, truth), n)
    except ConstantVector:
        return Cell(None, None, n, "undefined")


def build_report(scores: Iterable[ScoreVector], index: DatasetIndex) -> CorrelationReport:
    """Correlate every score vector with normalized ground truth.

    Items without ground truth are left out of the cell (``n`` reflects
    that). Categories come out in lexicographic order.
    """
    items = index.by_id()
    known = set(index.categories)
    vectors = sorted(scores, key=lambda s: (s.category, list(Principle).index(s.principle), s.method))
    report = CorrelationReport(dataset=index.dataset)
    labeled_any = False
    for sv in vectors:
        if sv.category not in known:
            raise MetricError(f"score vector category {sv.category!r} is not in dataset {index.dataset!r}")
        xs, ys = [], []
        for item_id, s in zip(sv.ids, sv.scores):
            gt = items[item_id].ground_truth_norm
            if gt is not None:
                xs.append(s)
                ys.append(gt)
        labeled_any = labeled_any or bool(xs)
        report.set(sv.category, sv.principle, sv.method, correlate(xs, ys))
    if vectors and not labeled_any:
        raise NoLabeledItems(f"no item in dataset {index.dataset!r} carries a ground-truth score")
    return report
