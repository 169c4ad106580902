"""Binned confidence/accuracy, expected calibration error and reliability-diagram data."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np


@dataclass
class CalibrationBin:
    lower: float
    upper: float
    count: int
    confidence: float  # NaN when empty
    accuracy: float  # NaN when empty

    @property
    def empty(self) -> bool:
        return self.count == 0

    @property
    def gap(self) -> float:
        """accuracy - confidence: positive means under-confident, negative over-confident."""
        return self.accuracy - self.confidence


@dataclass
class CalibrationTable:
    bins: list[CalibrationBin]
    ece: float
    n: int

    @property
    def bin_count(self) -> int:
        return len(self.bins)


def calibrate(confidence, correct, n_bins: int = 10) -> CalibrationTable:
    """Equal-width bins ``(e/E, (e+1)/E]`` over per-sample confidences.

    Empty bins contribute nothing to the ECE.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    conf = np.asarray(confidence, dtype=np.float64)
    hit = np.asarray(correct, dtype=bool)
    if conf.ndim != 1 or conf.shape != hit.shape or conf.size == 0:
        raise ValueError("need matching non-empty 1-D confidence and correctness arrays")
    if not np.all((conf > 0.0) & (conf <= 1.0)):
        raise ValueError("confidences must lie in (0, 1]")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    # left-open, right-closed bins against the stored edges
    which = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, n_bins - 1)
    n = conf.size
    bins = []
    ece = 0.0
    for e in range(n_bins):
        sel = which == e
        m = int(sel.sum())
        if m:
            c = float(conf[sel].mean())
            a = float(hit[sel].mean())
            ece += m / n * abs(a - c)
        else:
            c = a = float("nan")
        bins.append(CalibrationBin(float(edges[e]), float(edges[e + 1]), m, c, a))
    return CalibrationTable(bins, ece, n)


@dataclass
class ReliabilityData:
    lower: np.ndarray
    upper: np.ndarray
    bar_height: np.ndarray  # accuracy, 0 for empty bins
    empty: np.ndarray  # bool
    mean_confidence: np.ndarray  # NaN for empty bins
    histogram: np.ndarray  # sample counts per bin
    bisector: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 0.0), (1.0, 1.0))


def reliability_data(table: CalibrationTable) -> ReliabilityData:
    empty = np.array([b.empty for b in table.bins])
    acc = np.array([b.accuracy for b in table.bins])
    return ReliabilityData(
        lower=np.array([b.lower for b in table.bins]),
        upper=np.array([b.upper for b in table.bins]),
        bar_height=np.where(empty, 0.0, acc),
        empty=empty,
        mean_confidence=np.array([b.confidence for b in table.bins]),
        histogram=np.array([b.count for b in table.bins], dtype=np.int64),
    )


CALIBRATION_HEADER = ["bin_lower", "bin_upper", "count", "confidence", "accuracy"]


def write_calibration_csv(table: CalibrationTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CALIBRATION_HEADER)
        for b in table.bins:
            w.writerow([repr(b.lower), repr(b.upper), b.count, repr(b.confidence), repr(b.accuracy)])


def read_calibration_csv(path) -> CalibrationTable:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CALIBRATION_HEADER:
            raise ValueError(f"unexpected calibration header {header}")
        bins = [
            CalibrationBin(float(r[0]), float(r[1]), int(r[2]), float(r[3]), float(r[4]))
            for r in reader if r
        ]
    n = sum(b.count for b in bins)
    ece = sum(b.count / n * abs(b.gap) for b in bins if not b.empty) if n else 0.0
    return CalibrationTable(bins, ece, n)


def write_summary_json(path, accuracy: float, ece: float, mean_tu: float, mean_au: float, mean_eu: float) -> None:
    doc = {"accuracy": accuracy, "ece": ece, "mean_tu": mean_tu, "mean_au": mean_au, "mean_eu": mean_eu}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
