"""Probability calibration, reliability diagrams and expected calibration error.

Two calibration maps are offered: a sigmoid rescaling in logit space
(logistic(a * logit(f) + b), fitted by damped Newton) and an isotonic step
function (pool-adjacent-violators). Reliability diagrams bin predictions
with the Freedman-Diaconis rule by default, equal-width over [0, 1].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .gbdt import sigmoid

CALIBRATION_METHODS = ("sigmoid", "isotonic")
FD_MAX_BINS = 100
_FALLBACK_BINS = 10  # used when the prediction IQR degenerates to zero
_LOGIT_EPS = 1e-12


class CalibrationError(ValueError):
    """Calibration could not be fitted (single class, non-convergence, ...)."""


@dataclass(frozen=True)
class PredictionSet:
    """Paired predicted probabilities and binary outcomes."""

    f: np.ndarray
    o: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=np.float64)
        o = np.asarray(self.o, dtype=np.int64)
        if f.ndim != 1 or o.ndim != 1:
            raise ValueError("f and o must be one-dimensional")
        if len(f) != len(o):
            raise ValueError(f"length mismatch: {len(f)} predictions vs {len(o)} outcomes")
        if len(f) < 1:
            raise ValueError("a prediction set needs at least one pair")
        if np.any(np.isnan(f)) or np.any(f < 0.0) or np.any(f > 1.0):
            raise ValueError("predicted probabilities must lie in [0, 1]")
        if set(np.unique(o)) - {0, 1}:
            raise ValueError("outcomes must be 0 or 1")
        f = f.copy()
        o = o.copy()
        f.setflags(write=False)
        o.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "o", o)

    @property
    def n(self) -> int:
        return len(self.f)

    def subset(self, indices) -> "PredictionSet":
        idx = np.asarray(indices, dtype=np.int64)
        return PredictionSet(self.f[idx], self.o[idx])


def logit(p):
    p = np.clip(np.asarray(p, dtype=np.float64), _LOGIT_EPS, 1.0 - _LOGIT_EPS)
    return np.log(p / (1.0 - p))


@dataclass(frozen=True)
class Calibrator:
    """Fitted calibration map; apply() keeps outputs inside [0, 1].

    sigmoid: parameters (a, b), strictly monotone for a > 0 so score
    rankings survive calibration. isotonic: right-continuous step function
    given by block start positions and fitted values, non-decreasing.
    """

    method: str
    a: float | None = None
    b: float | None = None
    thresholds: tuple[float, ...] | None = None
    values: tuple[float, ...] | None = None

    def apply(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        scalar = f.ndim == 0
        f = np.atleast_1d(f)
        if self.method == "sigmoid":
            out = sigmoid(self.a * logit(f) + self.b)
        else:
            idx = np.searchsorted(np.asarray(self.thresholds), f, side="right") - 1
            idx = np.clip(idx, 0, len(self.values) - 1)
            out = np.asarray(self.values, dtype=np.float64)[idx]
        out = np.clip(out, 0.0, 1.0)
        return float(out[0]) if scalar else out

    def to_dict(self) -> dict:
        if self.method == "sigmoid":
            return {"method": "sigmoid", "a": self.a, "b": self.b}
        return {"method": "isotonic", "thresholds": list(self.thresholds), "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "Calibrator":
        if d["method"] == "sigmoid":
            return cls(method="sigmoid", a=float(d["a"]), b=float(d["b"]))
        return cls(
            method="isotonic",
            thresholds=tuple(float(t) for t in d["thresholds"]),
            values=tuple(float(v) for v in d["values"]),
        )


def _fit_sigmoid(scores: PredictionSet, max_iter: int = 100, tol: float = 1e-8) -> Calibrator:
    z = logit(scores.f)
    y = scores.o.astype(np.float64)
    a, b = 1.0, 0.0

    def loss(a_, b_):
        m = a_ * z + b_
        return float(np.mean(np.logaddexp(0.0, m) - y * m))

    current = loss(a, b)
    for _ in range(max_iter):
        p = sigmoid(a * z + b)
        r = p - y
        grad = np.array([np.sum(r * z), np.sum(r)])
        if float(np.linalg.norm(grad)) < tol:
            return Calibrator(method="sigmoid", a=a, b=b)
        w = p * (1.0 - p)
        hess = np.array([[np.sum(w * z * z), np.sum(w * z)], [np.sum(w * z), np.sum(w)]])
        try:
            step = np.linalg.solve(hess + 1e-10 * np.eye(2), grad)
        except np.linalg.LinAlgError:
            raise CalibrationError("sigmoid calibration: singular hessian") from None
        # backtracking damping
        t = 1.0
        for _ in range(50):
            cand = loss(a - t * step[0], b - t * step[1])
            if cand <= current:
                break
            t /= 2.0
        a, b = a - t * step[0], b - t * step[1]
        current = loss(a, b)
    raise CalibrationError(
        f"sigmoid calibration did not converge in {max_iter} iterations "
        "(scores may be perfectly separable)"
    )


def _fit_isotonic(scores: PredictionSet) -> Calibrator:
    order = np.argsort(scores.f, kind="stable")
    f = scores.f[order]
    y = scores.o[order].astype(np.float64)
    # pool exact ties in f first so the fitted map is a function of f
    starts, inverse, counts = np.unique(f, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=y)

    # pool-adjacent-violators over the tied groups
    block_value = list(sums / counts)
    block_weight = list(counts.astype(np.float64))
    block_start = list(range(len(starts)))
    i = 0
    while i < len(block_value) - 1:
        if block_value[i] > block_value[i + 1]:
            merged_w = block_weight[i] + block_weight[i + 1]
            merged_v = (block_value[i] * block_weight[i] + block_value[i + 1] * block_weight[i + 1]) / merged_w
            block_value[i : i + 2] = [merged_v]
            block_weight[i : i + 2] = [merged_w]
            del block_start[i + 1]
            if i > 0:
                i -= 1
        else:
            i += 1
    thresholds = tuple(float(starts[s]) for s in block_start)
    values = tuple(float(v) for v in block_value)
    return Calibrator(method="isotonic", thresholds=thresholds, values=values)


def fit_calibrator(scores: PredictionSet, method: str = "sigmoid") -> Calibrator:
    """Fit a calibration map on held-out scores.

    The scores must come from data disjoint from the model's training rows;
    that separation is the caller's responsibility. Raises
    :class:`CalibrationError` when only one outcome class is present or the
    sigmoid fit fails to converge.
    """
    if method not in CALIBRATION_METHODS:
        raise ValueError(f"unknown calibration method {method!r}")
    n_pos = int(scores.o.sum())
    if n_pos == 0 or n_pos == scores.n:
        raise CalibrationError("calibration requires both outcome classes")
    if method == "sigmoid":
        return _fit_sigmoid(scores)
    return _fit_isotonic(scores)


def shift_prior(probabilities, source_prevalence: float, target_prevalence: float):
    """Re-weight calibrated probabilities from one base rate to another.

    Standard prior-shift correction: add logit(target) - logit(source) in
    logit space. Strictly monotone, so rankings and threshold decisions map
    through unchanged. Used when a model trained on a balanced extract
    screens a portfolio whose bad-loan rate is known to differ.
    """
    for name, v in (("source_prevalence", source_prevalence), ("target_prevalence", target_prevalence)):
        if not (0.0 < v < 1.0):
            raise ValueError(f"{name} must be in (0, 1), got {v}")
    p = np.asarray(probabilities, dtype=np.float64)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    delta = math.log(target_prevalence / (1.0 - target_prevalence)) - math.log(
        source_prevalence / (1.0 - source_prevalence)
    )
    out = sigmoid(logit(p) + delta)
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Reliability diagram and ECE
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReliabilityBin:
    lower: float
    upper: float
    count: int
    mean_predicted: float  # NaN when the bin is empty
    fraction_positive: float  # NaN when the bin is empty


@dataclass(frozen=True)
class ReliabilityDiagram:
    """Equal-width bins over [0, 1] with per-bin mean prediction and positive rate."""

    bins: tuple[ReliabilityBin, ...]
    rule: str
    n: int


def freedman_diaconis_bin_count(f: np.ndarray) -> int:
    """Bin count from the FD width 2*IQR/N^(1/3), clamped to [1, 100].

    A zero IQR has no usable width; fall back to 10 fixed bins.
    """
    f = np.asarray(f, dtype=np.float64)
    n = len(f)
    if n < 2:
        raise ValueError("the Freedman-Diaconis rule needs at least 2 predictions")
    q75, q25 = np.percentile(f, [75.0, 25.0])
    iqr = float(q75 - q25)
    if iqr <= 0.0:
        return _FALLBACK_BINS
    width = 2.0 * iqr / n ** (1.0 / 3.0)
    return int(min(max(math.ceil(1.0 / width), 1), FD_MAX_BINS))


def reliability_bins(scores: PredictionSet, rule: str | int = "freedman_diaconis") -> ReliabilityDiagram:
    """Bin predictions into a reliability diagram.

    ``rule`` is "freedman_diaconis" or a fixed positive bin count. Bins are
    equal-width over [0, 1]; empty bins are kept with count 0 so the bins
    always partition the unit interval.
    """
    if isinstance(rule, int):
        if rule < 1:
            raise ValueError("fixed bin count must be >= 1")
        k = rule
        rule_name = f"fixed({rule})"
    elif rule == "freedman_diaconis":
        k = freedman_diaconis_bin_count(scores.f)
        rule_name = "freedman_diaconis"
    else:
        raise ValueError(f"unknown binning rule {rule!r}")

    edges = np.linspace(0.0, 1.0, k + 1)
    # assign against the actual edge values so every member satisfies
    # lower <= f <= upper bit-exactly; the last bin closes at 1.0
    idx = np.clip(np.searchsorted(edges, scores.f, side="right") - 1, 0, k - 1)
    bins = []
    for b in range(k):
        mask = idx == b
        count = int(mask.sum())
        if count:
            mean_pred = float(scores.f[mask].mean())
            frac_pos = float(scores.o[mask].mean())
        else:
            mean_pred = math.nan
            frac_pos = math.nan
        bins.append(ReliabilityBin(float(edges[b]), float(edges[b + 1]), count, mean_pred, frac_pos))
    return ReliabilityDiagram(bins=tuple(bins), rule=rule_name, n=scores.n)


def expected_calibration_error(diagram: ReliabilityDiagram) -> float:
    """Count-weighted mean absolute gap between predicted and observed rates."""
    total = 0.0
    for b in diagram.bins:
        if b.count == 0:
            continue
        total += (b.count / diagram.n) * abs(b.fraction_positive - b.mean_predicted)
    return total


def reliability_to_csv(diagram: ReliabilityDiagram, path: str | Path) -> None:
    """Export the diagram data (the calibration-curve plot input) as CSV."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lower", "upper", "count", "mean_predicted", "fraction_positive"])
        for b in diagram.bins:
            writer.writerow(
                [
                    repr(b.lower),
                    repr(b.upper),
                    b.count,
                    "" if math.isnan(b.mean_predicted) else repr(b.mean_predicted),
                    "" if math.isnan(b.fraction_positive) else repr(b.fraction_positive),
                ]
            )


def diagram_to_rows(diagram: ReliabilityDiagram) -> list[dict]:
    return [
        {
            "lower": b.lower,
            "upper": b.upper,
            "count": b.count,
            "mean_predicted": None if math.isnan(b.mean_predicted) else b.mean_predicted,
            "fraction_positive": None if math.isnan(b.fraction_positive) else b.fraction_positive,
        }
        for b in diagram.bins
    ]
