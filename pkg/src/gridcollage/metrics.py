"""Cost and accuracy metrics for collage prompting.

Conventions: accuracy in percentage points (0..100), cost in dollars per
1,000 images, natural logarithms.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class UndefinedMetricError(ZeroDivisionError):
    """PCE is undefined when the accuracy equals the reference accuracy."""


def cer(accuracy: float, cost: float, gamma: float = 2.0) -> float:
    """Cost-effective ratio ``ln(A + 1)**gamma / ln(C + e)``."""
    if accuracy < 0 or cost < 0:
        raise ValueError(f"accuracy and cost must be non-negative, got {accuracy}, {cost}")
    return math.log(accuracy + 1.0) ** gamma / math.log(cost + math.e)


def pce(accuracy: float, cost: float, ref_accuracy: float, ref_cost: float) -> float:
    """Cost saved per accuracy point lost, ``exp(|C - C_ref| / |A - A_ref|)``."""
    if accuracy == ref_accuracy:
        raise UndefinedMetricError("PCE undefined: accuracy equals the reference accuracy")
    return math.exp(abs(cost - ref_cost) / abs(accuracy - ref_accuracy))


@dataclass(frozen=True)
class CostModel:
    cost_per_request: float
    label_tokens: int | None = None

    def __post_init__(self):
        if not self.cost_per_request > 0:
            raise ValueError("cost_per_request must be > 0")

    @classmethod
    def from_reference(cls, cost_per_1k_single: float, **kw) -> "CostModel":
        """Calibrate from the single-image ($ per 1,000 images) reference cost."""
        return cls(cost_per_request=cost_per_1k_single / 1000.0, **kw)

    @property
    def reference_cost_per_1k(self) -> float:
        return 1000.0 * self.cost_per_request


def cost_per_1k(model: CostModel, n: int) -> float:
    """Dollars per 1,000 images when ``n*n`` images share one request."""
    if n < 1:
        raise ValueError("grid side must be >= 1")
    return 1000.0 * model.cost_per_request / (n * n)


def collage_accuracy(record) -> float:
    pred = list(record.pred if hasattr(record, "pred") else record)
    if not pred:
        raise ValueError("empty prediction record")
    return sum(pred) / len(pred)


def position_accuracy(records: Sequence, n: int) -> np.ndarray:
    """Mean correctness per cell over ``records`` (``pred`` indexed by cell)."""
    if not records:
        raise ValueError("no records")
    k = n * n
    flags = np.asarray([list(getattr(r, "pred", r)) for r in records], dtype=np.float64)
    if flags.shape[1] != k:
        raise ValueError(f"records have {flags.shape[1]} cells, grid {n}x{n} needs {k}")
    return flags.mean(axis=0)


@dataclass(frozen=True)
class MetricRow:
    dataset: str
    n: int
    cost_per_1k: float
    accuracy: float
    cer: float
    pce: float | None


def metric_row(dataset: str, n: int, accuracy: float, cost: float,
               ref_accuracy: float | None = None, ref_cost: float | None = None,
               gamma: float = 2.0) -> MetricRow:
    p = None
    if ref_accuracy is not None and ref_cost is not None:
        try:
            p = pce(accuracy, cost, ref_accuracy, ref_cost)
        except UndefinedMetricError:
            p = None
    return MetricRow(dataset, n, cost, accuracy, cer(accuracy, cost, gamma), p)


_COLUMNS = ["dataset", "n", "cost_per_1k", "accuracy", "cer", "pce"]


def _cells(row: MetricRow) -> list[str]:
    return [row.dataset, str(row.n), f"{row.cost_per_1k:.2f}", f"{row.accuracy:.1f}",
            f"{row.cer:.2f}", "-" if row.pce is None else f"{row.pce:.2f}"]


def report_csv(rows: Iterable[MetricRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_COLUMNS)
    for row in rows:
        cells = _cells(row)
        if row.pce is None:
            cells[-1] = ""
        w.writerow(cells)
    return buf.getvalue()


def report_table(rows: Iterable[MetricRow]) -> str:
    body = [_cells(r) for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c)
              for i, c in enumerate(_COLUMNS)]
    lines = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(_COLUMNS, widths)))]
    for b in body:
        lines.append("  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(b, widths))))
    return "\n".join(lines) + "\n"
