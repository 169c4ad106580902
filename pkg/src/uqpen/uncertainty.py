"""Model averaging and the two uncertainty decompositions.

Draw matrices are ``(S, K)`` for one input or ``(n, S, K)`` for a batch;
every function here broadcasts over leading axes.

Variance decomposition (per input, ``c_t`` the softmax of draw ``t``,
``c_bar`` their mean)::

    aleatoric = mean_t [diag(c_t) - c_t c_t^T]
    epistemic = mean_t [(c_t - c_bar)(c_t - c_bar)^T]

and the two sum to ``diag(c_bar) - c_bar c_bar^T``.

Information decomposition, in bits::

    TU = H(c_bar)    AU = mean_t H(c_t)    EU = TU - AU  (mutual information)
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import argmax_lowest, entropy_bits

EU_CLAMP = 1e-9


def bma(draws) -> np.ndarray:
    """Mean over the draw axis (second to last)."""
    d = np.asarray(draws, dtype=np.float64)
    if d.shape[-2] < 1:
        raise ValueError("need at least one draw")
    return d.mean(axis=-2)


@dataclass
class KwonMatrices:
    aleatoric: np.ndarray
    epistemic: np.ndarray


def kwon_decompose(draws) -> KwonMatrices:
    d = np.asarray(draws, dtype=np.float64)
    t = d.shape[-2]
    c_bar = d.mean(axis=-2)
    aleatoric = -np.einsum("...ti,...tj->...ij", d, d) / t
    # diagonal from per-draw c - c^2, which is never negative in floating point
    idx = np.arange(d.shape[-1])
    aleatoric[..., idx, idx] = np.mean(d - d * d, axis=-2)
    centered = d - c_bar[..., None, :]
    epistemic = np.einsum("...ti,...tj->...ij", centered, centered) / t
    return KwonMatrices(aleatoric, epistemic)


def info_decompose(draws) -> tuple:
    """``(TU, AU, EU)`` in bits; EU rounding dips down to -1e-9 are clamped to 0."""
    d = np.asarray(draws, dtype=np.float64)
    tu = entropy_bits(bma(d))
    au = np.mean(entropy_bits(d), axis=-1)
    eu = tu - au
    eu = np.where((eu < 0) & (eu >= -EU_CLAMP), 0.0, eu)
    if np.ndim(eu) == 0:
        return float(tu), float(au), float(eu)
    return tu, au, eu


@dataclass
class UncertaintyReport:
    """Per-sample records and aggregates for one evaluation set."""

    sample_ids: list[str]
    true: np.ndarray  # (n,)
    bma: np.ndarray  # (n, K)
    predicted: np.ndarray  # (n,)
    total_bits: np.ndarray
    aleatoric_bits: np.ndarray
    epistemic_bits: np.ndarray
    kwon: KwonMatrices  # (n, K, K) each
    class_names: tuple[str, ...]

    @property
    def n(self) -> int:
        return len(self.true)

    @property
    def class_count(self) -> int:
        return self.bma.shape[1]

    @property
    def correct(self) -> np.ndarray:
        return self.predicted == self.true

    @property
    def confidence(self) -> np.ndarray:
        return self.bma.max(axis=1)

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.correct))

    def mean_aleatoric(self) -> np.ndarray:
        return self.kwon.aleatoric.mean(axis=0)

    def mean_epistemic(self) -> np.ndarray:
        return self.kwon.epistemic.mean(axis=0)

    def confusion_percent(self) -> np.ndarray:
        """Rows are true classes, columns predictions; each non-empty row sums to 100."""
        k = self.class_count
        counts = np.zeros((k, k))
        np.add.at(counts, (self.true, self.predicted), 1.0)
        totals = counts.sum(axis=1, keepdims=True)
        return np.divide(100.0 * counts, totals, out=np.zeros_like(counts), where=totals > 0)

    def per_class_means(self) -> np.ndarray:
        """``(K, 3)`` mean TU/AU/EU by true class; NaN rows for absent classes."""
        k = self.class_count
        out = np.full((k, 3), np.nan)
        stacked = np.stack([self.total_bits, self.aleatoric_bits, self.epistemic_bits], axis=1)
        for c in range(k):
            sel = self.true == c
            if sel.any():
                out[c] = stacked[sel].mean(axis=0)
        return out


def report_from_draws(draws, true, class_names=None, sample_ids=None) -> UncertaintyReport:
    """Build a report from an ``(n, S, K)`` draw tensor and true labels."""
    d = np.asarray(draws, dtype=np.float64)
    if d.ndim != 3 or d.shape[0] == 0:
        raise ValueError("draws must be a non-empty (n, S, K) array")
    true = np.asarray(true, dtype=np.int64)
    n, _, k = d.shape
    avg = bma(d)
    tu, au, eu = info_decompose(d)
    names = tuple(class_names) if class_names is not None else tuple(str(i) for i in range(k))
    ids = [str(s) for s in sample_ids] if sample_ids is not None else [str(i) for i in range(n)]
    return UncertaintyReport(
        ids, true, avg, argmax_lowest(avg), np.asarray(tu), np.asarray(au), np.asarray(eu),
        kwon_decompose(d), names,
    )


def evaluate(predictor, dataset, indices, n_draws: int = 30, rng=None) -> UncertaintyReport:
    """Run ``predictor.draws`` on ``dataset[indices]`` and decompose every sample."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("evaluation set is empty")
    draws = predictor.draws(dataset.values[idx], n_draws, rng)
    return report_from_draws(
        draws, dataset.labels[idx], dataset.class_names, [dataset.sample_ids[i] for i in idx]
    )


@dataclass
class SweepRow:
    threshold: float
    acc_above: float  # confident side, TU < threshold
    acc_below: float  # uncertain side, TU >= threshold
    n_above: int
    n_below: int


def entropy_threshold_sweep(report: UncertaintyReport, thresholds=None) -> list[SweepRow]:
    """Accuracy of samples on either side of each total-entropy threshold.

    "Above" follows the confident reading: samples whose TU is strictly below
    the threshold.  Empty sides report NaN.
    """
    if report.n == 0:
        raise ValueError("empty report")
    if thresholds is None:
        top = math.log2(report.class_count)
        thresholds = np.round(np.arange(0.0, top + 1e-12, 0.05), 10)
    tu = report.total_bits
    correct = report.correct
    rows = []
    for tau in thresholds:
        conf = tu < tau
        unc = ~conf
        rows.append(
            SweepRow(
                float(tau),
                float(correct[conf].mean()) if conf.any() else math.nan,
                float(correct[unc].mean()) if unc.any() else math.nan,
                int(conf.sum()),
                int(unc.sum()),
            )
        )
    return rows


# ---------------------------------------------------------------------------
# CSV serialization

PER_SAMPLE_HEADER = ["sample_id", "true", "pred", "tu_bits", "au_bits", "eu_bits", "confidence"]


def write_per_sample_csv(report: UncertaintyReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PER_SAMPLE_HEADER)
        conf = report.confidence
        for i in range(report.n):
            w.writerow([
                report.sample_ids[i], int(report.true[i]), int(report.predicted[i]),
                repr(float(report.total_bits[i])), repr(float(report.aleatoric_bits[i])),
                repr(float(report.epistemic_bits[i])), repr(float(conf[i])),
            ])


def write_matrix_csv(matrix, class_names, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(class_names))
        for name, row in zip(class_names, matrix):
            w.writerow([name] + [repr(float(v)) for v in row])


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    return names, np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)


def write_per_class_csv(report: UncertaintyReport, path) -> None:
    means = report.per_class_means()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "tu_bits", "au_bits", "eu_bits"])
        for name, row in zip(report.class_names, means):
            w.writerow([name] + [repr(float(v)) for v in row])


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "acc_above", "acc_below", "n_above", "n_below"])
        for r in rows:
            w.writerow([repr(r.threshold), repr(r.acc_above), repr(r.acc_below), r.n_above, r.n_below])


def write_report(report: UncertaintyReport, out_dir) -> None:
    out = Path(out_dir)
    write_per_sample_csv(report, out / "per_sample.csv")
    write_matrix_csv(report.mean_aleatoric(), report.class_names, out / "aleatoric.csv")
    write_matrix_csv(report.mean_epistemic(), report.class_names, out / "epistemic.csv")
    write_matrix_csv(report.confusion_percent(), report.class_names, out / "confusion.csv")
    write_per_class_csv(report, out / "per_class.csv")
