"""Calibration and correlation metrics: ECE with reliability bins, Pearson and
Spearman correlations with t-approximation p-values, and accuracy."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, Optional, Sequence

import numpy as np
from scipy import stats

EceVariant = Literal["absolute", "squared"]


class CorrelationUndefined(ValueError):
    """A correlation was requested for a constant input."""


@dataclass(frozen=True)
class BinRow:
    lower: float
    upper: float
    bin_count: int
    mean_confidence: float
    empirical_accuracy: float


@dataclass
class CalibrationReport:
    ece: float
    ece_variant: str
    pearson: float
    pearson_p: float
    spearman: float
    spearman_p: float
    accuracy: float
    n: int
    bins: list = field(default_factory=list)

    METRICS = ("ece", "pearson", "pearson_p", "spearman", "spearman_p", "accuracy")

    def metric_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.METRICS}

    def to_json(self) -> dict:
        d = self.metric_dict()
        d.update(ece_variant=self.ece_variant, n=self.n, bins=[vars(b) for b in self.bins])
        return d


def _pairs(samples) -> tuple[np.ndarray, np.ndarray]:
    conf, corr = [], []
    for s in samples:
        if isinstance(s, tuple):
            c, k = s
        else:
            c, k = s.confidence, s.correct
        if k is None:
            raise ValueError("every sample needs a correctness label")
        conf.append(float(c))
        corr.append(bool(k))
    return np.asarray(conf, dtype=float), np.asarray(corr, dtype=float)


def bin_edges(n_bins: int) -> np.ndarray:
    return np.array([b / n_bins for b in range(n_bins + 1)])


def bin_index(confidences: np.ndarray, n_bins: int) -> np.ndarray:
    """Bin b covers [b/n, (b+1)/n); the last bin is closed at 1."""
    edges = bin_edges(n_bins)
    return np.minimum(np.searchsorted(edges, confidences, side="right") - 1, n_bins - 1)


def ece(samples, n_bins: int = 10, variant: EceVariant = "absolute") -> tuple[float, list[BinRow]]:
    """Expected calibration error over equal-width bins, weighted by occupancy."""
    conf, corr = _pairs(samples)
    if len(conf) == 0:
        raise ValueError("ECE of an empty sample set is undefined")
    if np.any((conf < 0) | (conf > 1)):
        raise ValueError("confidences must lie in [0, 1]")
    if variant not in ("absolute", "squared"):
        raise ValueError(f"unknown ECE variant {variant!r}")
    if n_bins < 1:
        raise ValueError("n_bins must be positive")
    n = len(conf)
    idx = bin_index(conf, n_bins)
    edges = bin_edges(n_bins)
    rows, total = [], 0.0
    for b in range(n_bins):
        sel = idx == b
        cnt = int(sel.sum())
        if cnt == 0:
            rows.append(BinRow(edges[b], edges[b + 1], 0, float("nan"), float("nan")))
            continue
        mc, acc = float(conf[sel].mean()), float(corr[sel].mean())
        gap = abs(acc - mc) if variant == "absolute" else (acc - mc) ** 2
        total += cnt / n * gap
        rows.append(BinRow(edges[b], edges[b + 1], cnt, mc, acc))
    return total, rows


def _t_pvalue(r: float, n: int) -> float:
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), n - 2)))


def _check_xy(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 3:
        raise ValueError("correlation needs at least 3 observations")
    return x, y


def _pcc(x: np.ndarray, y: np.ndarray) -> float:
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise CorrelationUndefined("correlation undefined for a constant input")
    return max(-1.0, min(1.0, float(dx @ dy) / math.sqrt(sxx * syy)))


def pearson(x, y) -> tuple[float, float]:
    """Sample correlation and two-sided p-value from t with n-2 degrees of freedom."""
    x, y = _check_xy(x, y)
    r = _pcc(x, y)
    return r, _t_pvalue(r, len(x))


def average_ranks(x) -> np.ndarray:
    return stats.rankdata(np.asarray(x, dtype=float), method="average")


def spearman(x, y) -> tuple[float, float]:
    """Pearson correlation of average ranks; p-value as in :func:`pearson`."""
    x, y = _check_xy(x, y)
    rho = _pcc(average_ranks(x), average_ranks(y))
    return rho, _t_pvalue(rho, len(x))


def _all_permutations(n: int) -> np.ndarray:
    perms = np.zeros((1, 1), dtype=np.int8)
    for k in range(1, n):
        m = len(perms)
        out = np.empty((m * (k + 1), k + 1), dtype=np.int8)
        for pos in range(k + 1):
            block = out[pos * m : (pos + 1) * m]
            block[:, :pos] = perms[:, :pos]
            block[:, pos] = k
            block[:, pos + 1 :] = perms[:, pos:]
        perms = out
    return perms


def permutation_pvalue(x, y, method: Literal["pearson", "spearman"] = "spearman", chunk: int = 400_000) -> float:
    """Exact two-sided permutation p-value over all n! reorderings of y (n <= 10)."""
    x, y = _check_xy(x, y)
    n = len(x)
    if n > 10:
        raise ValueError("exact permutation p-values are limited to n <= 10")
    if method == "spearman":
        x, y = average_ranks(x), average_ranks(y)
    dx, dy = x - x.mean(), y - y.mean()
    norm = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if norm == 0.0:
        raise CorrelationUndefined("correlation undefined for a constant input")
    observed = abs(float(dx @ dy) / norm)
    perms = _all_permutations(n)
    hits = 0
    for start in range(0, len(perms), chunk):
        r = np.abs(dy[perms[start : start + chunk]] @ dx) / norm
        hits += int(np.count_nonzero(r >= observed - 1e-12))
    return hits / len(perms)


def accuracy(correct: Iterable) -> float:
    flags = list(correct)
    if not flags:
        raise ValueError("accuracy of an empty set is undefined")
    if any(c is None for c in flags):
        raise ValueError("every sample needs a correctness label")
    return sum(bool(c) for c in flags) / len(flags)


def _safe(fn, x, y) -> tuple[float, float]:
    try:
        return fn(x, y)
    except CorrelationUndefined:
        return float("nan"), float("nan")


def report(samples, n_bins: int = 10, variant: EceVariant = "absolute") -> CalibrationReport:
    """All metrics for one set of (confidence, correct) samples.

    Correlations are between stated confidence and the correctness indicator;
    a constant input yields NaN rather than an error.
    """
    samples = list(samples)
    conf, corr = _pairs(samples)
    e, bins = ece(list(zip(conf, corr)), n_bins, variant)
    pr, pp = _safe(pearson, conf, corr)
    sr, sp = _safe(spearman, conf, corr)
    return CalibrationReport(
        ece=e,
        ece_variant=variant,
        pearson=pr,
        pearson_p=pp,
        spearman=sr,
        spearman_p=sp,
        accuracy=accuracy(corr),
        n=len(conf),
        bins=bins,
    )


def write_report_csv(rep: CalibrationReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        w.writerow(["ece_variant", rep.ece_variant])
        w.writerow(["n", rep.n])
        for k, v in rep.metric_dict().items():
            w.writerow([k, repr(v)])


def write_bins_csv(bins: Sequence[BinRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lower", "upper", "count", "mean_confidence", "empirical_accuracy"])
        for b in bins:
            w.writerow([repr(b.lower), repr(b.upper), b.bin_count, repr(b.mean_confidence), repr(b.empirical_accuracy)])
