"""Classification metrics and per-seed aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from netresgen.errors import DomainError


@dataclass
class MetricReport:
    """F1 / accuracy of one experiment, with per-seed values when aggregated.

    The positive class is ``resilient`` (label 1) throughout.
    ``zero_division`` flags degenerate precision/recall that was clamped
    to zero.
    """

    tag: str = ""
    f1: float = 0.0
    accuracy: float = 0.0
    f1_values: List[float] = field(default_factory=list)
    acc_values: List[float] = field(default_factory=list)
    zero_division: bool = False

    @property
    def f1_std(self) -> float:
        return float(np.std(self.f1_values)) if self.f1_values else 0.0

    @property
    def acc_std(self) -> float:
        return float(np.std(self.acc_values)) if self.acc_values else 0.0


def compute_metrics(
    predictions: Sequence[int], labels: Sequence[int], tag: str = ""
) -> MetricReport:
    """F1 and accuracy of hard binary predictions (resilient = positive)."""
    pred = np.asarray(predictions, dtype=np.int64)
    lab = np.asarray(labels, dtype=np.int64)
    if pred.shape != lab.shape:
        raise DomainError(f"length mismatch: {pred.shape} vs {lab.shape}")
    if pred.size == 0:
        raise DomainError("need at least one sample")

    tp = int(((pred == 1) & (lab == 1)).sum())
    fp = int(((pred == 1) & (lab == 0)).sum())
    fn = int(((pred == 0) & (lab == 1)).sum())
    acc = float((pred == lab).mean())

    flag = False
    if tp + fp == 0 or tp + fn == 0:
        precision = recall = 0.0
        flag = True
    else:
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
    if precision + recall == 0.0:
        f1 = 0.0
        flag = True
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return MetricReport(
        tag=tag,
        f1=f1,
        accuracy=acc,
        f1_values=[f1],
        acc_values=[acc],
        zero_division=flag,
    )


def aggregate_reports(tag: str, reports: Sequence[MetricReport]) -> MetricReport:
    """Pool per-seed reports into one row with mean metrics."""
    f1s = [r.f1 for r in reports]
    accs = [r.accuracy for r in reports]
    return MetricReport(
        tag=tag,
        f1=float(np.mean(f1s)),
        accuracy=float(np.mean(accs)),
        f1_values=f1s,
        acc_values=accs,
        zero_division=any(r.zero_division for r in reports),
    )
