"""Data-drift detection between a training window and deployment batches.

Numeric features get a population stability index over reference-quantile
bins plus a two-sample Kolmogorov-Smirnov distance; categoricals get PSI
over their observed categories. Both are rank-based, so rescaling a feature
the same way in both windows never changes the verdict.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data_model import Portfolio

PSI_EPSILON = 1e-6
DEFAULT_PSI_BINS = 10
PSI_WARNING = 0.1
PSI_ALERT = 0.25

VERDICTS = ("stable", "warning", "alert")


@dataclass(frozen=True)
class FeatureDrift:
    feature: str
    psi: float
    ks_statistic: float | None  # None for categorical features
    verdict: str


@dataclass(frozen=True)
class DriftReport:
    features: tuple[FeatureDrift, ...]
    reference_window: str
    current_window: str
    psi_warning: float = PSI_WARNING
    psi_alert: float = PSI_ALERT

    @property
    def has_alert(self) -> bool:
        return any(f.verdict == "alert" for f in self.features)

    def to_dict(self) -> dict:
        return {
            "reference_window": self.reference_window,
            "current_window": self.current_window,
            "thresholds": {"psi_warning": self.psi_warning, "psi_alert": self.psi_alert},
            "features": {
                f.feature: {"psi": f.psi, "ks_statistic": f.ks_statistic, "verdict": f.verdict}
                for f in self.features
            },
        }

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def psi_from_shares(reference_shares, current_shares, epsilon: float = PSI_EPSILON) -> float:
    """PSI between two share vectors: sum of (q - p) * ln(q / p) per bin.

    Shares are floored at ``epsilon`` before the log so empty bins stay
    finite. Symmetric in its two arguments and zero exactly when the share
    vectors coincide.
    """
    p = np.asarray(reference_shares, dtype=np.float64)
    q = np.asarray(current_shares, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("share vectors must have the same length")
    p = np.maximum(p, epsilon)
    q = np.maximum(q, epsilon)
    return float(np.sum((q - p) * np.log(q / p)))


def _numeric_shares(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    values = values[~np.isnan(values)]
    idx = np.searchsorted(edges, values, side="left")
    counts = np.bincount(idx, minlength=len(edges) + 1)
    return counts / counts.sum()


def reference_edges(reference: np.ndarray, bins: int = DEFAULT_PSI_BINS) -> np.ndarray:
    """Interior bin edges from reference quantiles (outer bins are open-ended)."""
    reference = np.asarray(reference, dtype=np.float64)
    reference = reference[~np.isnan(reference)]
    if len(reference) == 0:
        raise ValueError("reference vector is empty")
    qs = np.arange(1, bins) / bins
    return np.unique(np.quantile(reference, qs, method="inverted_cdf"))


def population_stability_index(reference, current, bins: int = DEFAULT_PSI_BINS) -> float:
    """PSI of a numeric feature with bin edges taken from reference quantiles."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    reference = np.asarray(reference, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    ref = reference[~np.isnan(reference)]
    cur = current[~np.isnan(current)]
    if len(ref) == 0 or len(cur) == 0:
        raise ValueError("both value vectors must be non-empty")
    edges = reference_edges(ref, bins)
    return psi_from_shares(_numeric_shares(ref, edges), _numeric_shares(cur, edges))


def categorical_psi(reference, current) -> float:
    """PSI over the union of observed categories."""
    ref = [str(v) for v in reference if v is not None]
    cur = [str(v) for v in current if v is not None]
    if not ref or not cur:
        raise ValueError("both value vectors must be non-empty")
    categories = sorted(set(ref) | set(cur))
    index = {c: i for i, c in enumerate(categories)}
    p = np.bincount([index[v] for v in ref], minlength=len(categories)) / len(ref)
    q = np.bincount([index[v] for v in cur], minlength=len(categories)) / len(cur)
    return psi_from_shares(p, q)


def ks_statistic(reference, current) -> float:
    """Two-sample Kolmogorov-Smirnov statistic: sup distance between ECDFs."""
    for arr in (np.asarray(reference), np.asarray(current)):
        if arr.dtype.kind in "OUS":
            raise ValueError("ks_statistic applies to numeric vectors only")
    reference = np.asarray(reference, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    ref = np.sort(reference[~np.isnan(reference)])
    cur = np.sort(current[~np.isnan(current)])
    if len(ref) == 0 or len(cur) == 0:
        raise ValueError("both value vectors must be non-empty")
    grid = np.concatenate([ref, cur])
    ecdf_ref = np.searchsorted(ref, grid, side="right") / len(ref)
    ecdf_cur = np.searchsorted(cur, grid, side="right") / len(cur)
    return float(np.max(np.abs(ecdf_ref - ecdf_cur)))


def verdict_for(psi: float, warning: float = PSI_WARNING, alert: float = PSI_ALERT) -> str:
    if psi >= alert:
        return "alert"
    if psi >= warning:
        return "warning"
    return "stable"


def drift_scan(
    train: Portfolio,
    live: Portfolio,
    features: Sequence[str],
    bins: int = DEFAULT_PSI_BINS,
    psi_warning: float = PSI_WARNING,
    psi_alert: float = PSI_ALERT,
    reference_window: str = "train",
    current_window: str = "live",
) -> DriftReport:
    """Per-feature drift between the training window and a deployment batch."""
    rows: list[FeatureDrift] = []
    for name in features:
        feat = train.feature(name)
        live.feature(name)  # raises on missing feature
        if feat.is_numeric_like:
            psi = population_stability_index(train.column(name), live.column(name), bins)
            ks = ks_statistic(train.column(name), live.column(name))
        else:
            psi = categorical_psi(train.column(name), live.column(name))
            ks = None
        rows.append(FeatureDrift(name, psi, ks, verdict_for(psi, psi_warning, psi_alert)))
    return DriftReport(
        features=tuple(rows),
        reference_window=reference_window,
        current_window=current_window,
        psi_warning=psi_warning,
        psi_alert=psi_alert,
    )


# ---------------------------------------------------------------------------
# Frozen baselines (stored alongside the model so Phase III scans stay
# comparable over time even after the training extract is gone)
# ---------------------------------------------------------------------------


def build_baseline(p: Portfolio, features: Sequence[str], bins: int = DEFAULT_PSI_BINS) -> dict:
    """Per-feature reference shares and edges, JSON-compatible."""
    baseline: dict[str, dict] = {}
    for name in features:
        feat = p.feature(name)
        if feat.is_numeric_like:
            col = np.asarray(p.column(name), dtype=np.float64)
            edges = reference_edges(col, bins)
            baseline[name] = {
                "kind": "numeric",
                "edges": [float(e) for e in edges],
                "shares": _numeric_shares(col, edges).tolist(),
            }
        else:
            values = [str(v) for v in p.column(name) if v is not None]
            categories = sorted(set(values))
            index = {c: i for i, c in enumerate(categories)}
            shares = np.bincount([index[v] for v in values], minlength=len(categories)) / len(values)
            baseline[name] = {"kind": "categorical", "categories": categories, "shares": shares.tolist()}
    return baseline


def scan_against_baseline(
    baseline: Mapping[str, dict],
    live: Portfolio,
    psi_warning: float = PSI_WARNING,
    psi_alert: float = PSI_ALERT,
    reference_window: str = "baseline",
    current_window: str = "live",
) -> DriftReport:
    """Drift of a live batch against frozen reference shares."""
    rows: list[FeatureDrift] = []
    for name in sorted(baseline):
        entry = baseline[name]
        live.feature(name)
        if entry["kind"] == "numeric":
            col = np.asarray(live.column(name), dtype=np.float64)
            edges = np.asarray(entry["edges"], dtype=np.float64)
            cur = _numeric_shares(col, edges)
            psi = psi_from_shares(np.asarray(entry["shares"]), cur)
            ks = None
        else:
            values = [str(v) for v in live.column(name) if v is not None]
            categories = list(entry["categories"])
            index = {c: i for i, c in enumerate(categories)}
            known = [index[v] for v in values if v in index]
            unseen = len(values) - len(known)
            counts = np.bincount(known, minlength=len(categories)).astype(np.float64)
            ref = np.asarray(entry["shares"], dtype=np.float64)
            if unseen:
                # categories outside the baseline get one extra bin with zero reference share
                counts = np.append(counts, float(unseen))
                ref = np.append(ref, 0.0)
            psi = psi_from_shares(ref, counts / counts.sum())
            ks = None
        rows.append(FeatureDrift(name, psi, ks, verdict_for(psi, psi_warning, psi_alert)))
    return DriftReport(
        features=tuple(rows),
        reference_window=reference_window,
        current_window=current_window,
        psi_warning=psi_warning,
        psi_alert=psi_alert,
    )
