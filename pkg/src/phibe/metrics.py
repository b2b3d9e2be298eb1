"""Error norms, convergence-order fits and seed statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

ERROR_COLUMNS = ("method", "order", "dt", "n", "seed", "l2", "linf")


@dataclass
class ErrorReport:
    l2: float
    linf: float
    grid: str
    meta: dict = field(default_factory=dict)

    def row(self) -> dict:
        out = {c: self.meta.get(c, "") for c in ERROR_COLUMNS}
        out.update(l2=self.l2, linf=self.linf)
        return out


def _eval(V: Callable, nodes: np.ndarray) -> np.ndarray:
    vals = np.asarray(V(nodes), dtype=float).reshape(-1)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("value evaluator returned non-finite values")
    return vals


def l2_error(V1: Callable, V2: Callable, quadrature) -> float:
    """``sqrt(sum_n w_n (V1 - V2)^2)`` over the rule's nodes."""
    diff = _eval(V1, quadrature.nodes) - _eval(V2, quadrature.nodes)
    return math.sqrt(max(float(np.dot(quadrature.weights, diff**2)), 0.0))


def error_report(V: Callable, V_ref: Callable, quadrature, **meta) -> ErrorReport:
    diff = _eval(V, quadrature.nodes) - _eval(V_ref, quadrature.nodes)
    l2 = math.sqrt(max(float(np.dot(quadrature.weights, diff**2)), 0.0))
    return ErrorReport(l2=l2, linf=float(np.abs(diff).max()), grid=quadrature.kind, meta=meta)


@dataclass(frozen=True)
class OrderFit:
    slope: float
    intercept: float
    r2: float


def fit_order(x: Sequence[float], errors: Sequence[float]) -> OrderFit:
    """Least-squares line through ``(log x, log err)``."""
    x = np.asarray(x, dtype=float)
    e = np.asarray(errors, dtype=float)
    if x.shape != e.shape or x.size < 3:
        raise ValueError("need at least three (x, error) pairs")
    if np.any(x <= 0) or np.any(e <= 0):
        raise ValueError("order fit requires positive values")
    lx, le = np.log(x), np.log(e)
    slope, intercept = np.polyfit(lx, le, 1)
    resid = le - (slope * lx + intercept)
    ss_tot = float(np.sum((le - le.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return OrderFit(float(slope), float(intercept), r2)


@dataclass(frozen=True)
class SeedSummary:
    mean: float
    median: float
    variance: float
    stderr: float
    count: int


def seed_summary(errors: Iterable[float]) -> SeedSummary:
    e = np.asarray(list(errors), dtype=float)
    if e.size < 2:
        raise ValueError("seed summary needs at least two values")
    var = float(e.var(ddof=1))
    return SeedSummary(float(e.mean()), float(np.median(e)), var, math.sqrt(var / e.size), int(e.size))


def write_error_csv(path, reports: Iterable[ErrorReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ERROR_COLUMNS)
        writer.writeheader()
        for rep in reports:
            writer.writerow(rep.row())
