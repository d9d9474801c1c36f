"""Metrics and evaluation procedures: MAE, AUC-ROC, uncertainty retention
curves, sliding-window confidence-interval calibration and early-prediction
buckets."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError
from .eventlog import ceil_fraction

DEFAULT_THRESHOLDS = (1.0, 0.75, 0.50, 0.25, 0.10, 0.05)
DEFAULT_LEVELS = (0.50, 0.75, 0.90, 0.95, 0.99)
DEFAULT_FRACTIONS = (0.05, 0.10, 0.25, 0.50, 1.0, "all")


def mae(y_true, y_pred) -> float:
    y_true, y_pred = np.asarray(y_true, dtype=float), np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise UndefinedMetricError("MAE of an empty set is undefined")
    return float(np.mean(np.abs(y_true - y_pred)))


def auc_roc(y_true, scores) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + ½·P(tie)."""
    y = np.asarray(y_true).astype(int)
    scores = np.asarray(scores, dtype=float)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC-ROC needs both classes present")
    ranks = rankdata(scores)  # average ranks handle ties
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class RetentionCurve:
    thresholds: list
    metric_at: list  # NaN where the metric is undefined on the slice
    n_retained: list
    metric: str = "mae"

    def rows(self):
        return [{"threshold": t, "n_retained": n, self.metric: m}
                for t, n, m in zip(self.thresholds, self.n_retained, self.metric_at)]


def retention_curve(uncertainty, errors=None, *, labels=None, scores=None,
                    thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> RetentionCurve:
    """Metric on the most certain predictions at each retention threshold.

    Regression: pass absolute ``errors``; the metric is their mean (MAE).
    Classification: pass ``labels`` and ``scores``; the metric is AUC-ROC.
    Predictions are sorted by ascending uncertainty with ties kept in input order.
    """
    u = np.asarray(uncertainty, dtype=float)
    if u.size == 0:
        raise ValueError("retention_curve needs at least one prediction")
    if not np.all(np.isfinite(u)):
        raise ValueError("uncertainties must be finite")
    thresholds = sorted((float(t) for t in thresholds), reverse=True)
    order = np.argsort(u, kind="stable")
    classification = errors is None
    if classification:
        labels_s, scores_s = np.asarray(labels)[order], np.asarray(scores, dtype=float)[order]
    else:
        errors_s = np.abs(np.asarray(errors, dtype=float))[order]
    metric_at, n_retained = [], []
    for t in thresholds:
        k = max(1, ceil_fraction(t, len(u)))
        n_retained.append(k)
        if classification:
            try:
                metric_at.append(auc_roc(labels_s[:k], scores_s[:k]))
            except UndefinedMetricError:
                metric_at.append(float("nan"))
        else:
            metric_at.append(float(np.mean(errors_s[:k])))
    return RetentionCurve(thresholds, metric_at, n_retained, "auc_roc" if classification else "mae")


@dataclass
class CalibrationReport:
    levels: list
    checkpoints: list  # index of the first sample after each calibration window
    critical_values: list  # [checkpoint][level]
    coverage: list  # [checkpoint][level]
    n_following: list
    window: int
    stride: int

    def rows(self):
        out = []
        for c, zs, covs, n in zip(self.checkpoints, self.critical_values, self.coverage, self.n_following):
            for lvl, z, cov in zip(self.levels, zs, covs):
                out.append({"checkpoint": c, "level": lvl, "critical_value": z, "coverage": cov, "n_following": n})
        return out


def _coverage(resid, scale, z) -> float:
    return float(np.mean(resid <= z * scale)) if len(resid) else float("nan")


def calibrate_intervals(y, point, total_uncertainty, window: int = 5000, stride: int = 1000,
                        levels: Sequence[float] = DEFAULT_LEVELS) -> CalibrationReport:
    """Sliding-window critical values for ``point ± z·sqrt(total)`` intervals.

    At each checkpoint ``c`` the critical value for a level is the empirical
    level-quantile of ``|y - point| / sqrt(total)`` over records ``[c - window, c)``;
    coverage is measured on the following ``window`` records.  Records must be
    in chronological order.
    """
    y, point, total = (np.asarray(a, dtype=float) for a in (y, point, total_uncertainty))
    n = len(y)
    levels = sorted(float(l) for l in levels)
    resid = np.abs(y - point)
    scale = np.sqrt(total)
    with np.errstate(divide="ignore", invalid="ignore"):
        normalized = np.where(scale > 0, resid / scale, np.where(resid > 0, np.inf, 0.0))

    def quantiles(sl):
        return [float(np.quantile(normalized[sl], lvl, method="inverted_cdf")) for lvl in levels]

    report = CalibrationReport(levels, [], [], [], [], window, stride)
    if n <= window:
        warnings.warn(f"only {n} records for a calibration window of {window}; "
                      "using a single checkpoint calibrated and evaluated on all data")
        zs = quantiles(slice(0, n))
        report.checkpoints.append(n)
        report.critical_values.append(zs)
        report.coverage.append([_coverage(resid, scale, z) for z in zs])
        report.n_following.append(n)
        return report

    checkpoints = [c for c in range(window, n, stride) if c + window <= n] or [window]
    for c in checkpoints:
        zs = quantiles(slice(c - window, c))
        follow = slice(c, min(c + window, n))
        report.checkpoints.append(c)
        report.critical_values.append(zs)
        report.coverage.append([_coverage(resid[follow], scale[follow], z) for z in zs])
        report.n_following.append(follow.stop - follow.start)
    return report


@dataclass
class EarlyBucketReport:
    fractions: list
    median_case_days: float
    max_duration_days: list  # inf for the "all" bucket
    curves: list  # RetentionCurve or None for empty buckets
    sizes: list = field(default_factory=list)


def bucket_masks(prefix_duration, median_case_days: float, fractions=DEFAULT_FRACTIONS):
    """Cumulative bucket membership: prefix_duration <= fraction·median ("all" = every prefix)."""
    d = np.asarray(prefix_duration, dtype=float)
    out = []
    for f in fractions:
        cap = math.inf if f == "all" else float(f) * median_case_days
        out.append((cap, d <= cap))
    return out


def early_buckets(prefix_duration, uncertainty, errors=None, *, labels=None, scores=None,
                  case_duration=None, median_case_days: Optional[float] = None,
                  fractions=DEFAULT_FRACTIONS, thresholds=DEFAULT_THRESHOLDS) -> EarlyBucketReport:
    """Retention curves restricted to early prefixes.

    The median case duration is taken from ``median_case_days`` or computed
    from ``case_duration`` (one value per prefix; duplicates per case are
    collapsed by the caller or passed as per-case values).
    """
    if median_case_days is None:
        if case_duration is None:
            raise ValueError("pass median_case_days or case_duration")
        median_case_days = float(np.median(np.asarray(case_duration, dtype=float)))
    if not median_case_days > 0:
        raise ValueError("median test-case duration must be positive")
    u = np.asarray(uncertainty, dtype=float)
    report = EarlyBucketReport(list(fractions), median_case_days, [], [])
    for cap, mask in bucket_masks(prefix_duration, median_case_days, fractions):
        report.max_duration_days.append(cap)
        report.sizes.append(int(mask.sum()))
        if not mask.any():
            report.curves.append(None)
            continue
        if errors is not None:
            curve = retention_curve(u[mask], np.asarray(errors)[mask], thresholds=thresholds)
        else:
            curve = retention_curve(u[mask], labels=np.asarray(labels)[mask],
                                    scores=np.asarray(scores)[mask], thresholds=thresholds)
        report.curves.append(curve)
    return report


def bucket_train_filter(samples, max_duration_days: float):
    """Training prefixes no longer than ``max_duration_days``."""
    if max_duration_days < 0:
        raise ValueError("max_duration_days must be >= 0")
    return [s for s in samples if s.prefix_duration_days <= max_duration_days]
