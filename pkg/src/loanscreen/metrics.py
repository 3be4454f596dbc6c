"""Scoring and classification metrics: Brier loss, skill score, confusion rates.

The skill reference is the no-skill constant forecast at the evaluated
dataset's own prevalence. ``evaluate`` scores that reference forecast with
the same Brier implementation it applies to the model, so a forecast that
*is* the reference gets a skill of exactly zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibration import (
    PredictionSet,
    ReliabilityDiagram,
    diagram_to_rows,
    expected_calibration_error,
    reliability_bins,
)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.total < 1:
            raise ValueError("confusion counts must cover at least one record")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class SkillReport:
    bs: float
    bs_ref: float
    bss: float
    reference_policy: str = "dataset_prevalence_constant"


@dataclass(frozen=True)
class EvaluationReport:
    """Confusion counts, rates, skill and calibration error at one threshold.

    Rates with a zero denominator are None, with the reason recorded in
    ``undefined_rates`` -- never silently coerced to 0 or 1.
    """

    counts: ConfusionCounts
    prevalence: float
    sensitivity: float | None
    specificity: float | None
    ppv: float | None
    npv: float | None
    skill: SkillReport
    ece: float
    threshold: float
    diagram: ReliabilityDiagram
    undefined_rates: dict[str, str]


def brier_score(s: PredictionSet) -> float:
    """Mean squared difference between predicted probabilities and outcomes."""
    diff = s.f - s.o
    return float(np.mean(diff * diff))


def reference_brier(prevalence: float) -> float:
    """Brier score of the constant no-skill forecast at the given base rate."""
    if not (0.0 < prevalence < 1.0):
        raise ValueError(f"prevalence must be strictly inside (0, 1), got {prevalence}")
    return prevalence * (1.0 - prevalence)


def brier_skill_score(bs: float, bs_ref: float) -> float:
    """Improvement over the no-skill reference: 1 - bs/bs_ref (negative = worse)."""
    if not bs_ref > 0.0:
        raise ValueError(f"bs_ref must be positive, got {bs_ref}")
    return 1.0 - bs / bs_ref


def classify(s: PredictionSet, threshold: float) -> ConfusionCounts:
    """Tally the confusion matrix at a threshold (predict positive when f >= t)."""
    if not (0.0 <= threshold <= 1.0):
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    predicted = s.f >= threshold
    actual = s.o == 1
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def _rate(num: int, den: int, name: str, reason: str, undefined: dict[str, str]) -> float | None:
    if den == 0:
        undefined[name] = reason
        return None
    return num / den


def rates_from_counts(counts: ConfusionCounts) -> tuple[dict[str, float | None], dict[str, str]]:
    """Prevalence, sensitivity, specificity, PPV and NPV from raw counts."""
    undefined: dict[str, str] = {}
    rates = {
        "prevalence": (counts.tp + counts.fn) / counts.total,
        "sensitivity": _rate(counts.tp, counts.tp + counts.fn, "sensitivity", "no positives in data", undefined),
        "specificity": _rate(counts.tn, counts.tn + counts.fp, "specificity", "no negatives in data", undefined),
        "ppv": _rate(counts.tp, counts.tp + counts.fp, "ppv", "no predicted positives", undefined),
        "npv": _rate(counts.tn, counts.tn + counts.fn, "npv", "no predicted negatives", undefined),
    }
    return rates, undefined


def evaluate(s: PredictionSet, threshold: float, diagram_rule: str | int = "freedman_diaconis") -> EvaluationReport:
    """Full evaluation at one operating point.

    The skill reference is computed by scoring the constant forecast at this
    dataset's prevalence with :func:`brier_score` itself, so the no-skill
    fixed point lands on a skill of exactly 0.
    """
    counts = classify(s, threshold)
    rates, undefined = rates_from_counts(counts)
    prevalence = rates["prevalence"]
    if not (0.0 < prevalence < 1.0):
        raise ValueError("evaluate requires both outcome classes (prevalence strictly inside (0, 1))")

    bs = brier_score(s)
    reference_forecast = PredictionSet(np.full(s.n, prevalence), s.o)
    bs_ref = brier_score(reference_forecast)
    skill = SkillReport(bs=bs, bs_ref=bs_ref, bss=brier_skill_score(bs, bs_ref))

    diagram = reliability_bins(s, diagram_rule)
    ece = expected_calibration_error(diagram)
    return EvaluationReport(
        counts=counts,
        prevalence=prevalence,
        sensitivity=rates["sensitivity"],
        specificity=rates["specificity"],
        ppv=rates["ppv"],
        npv=rates["npv"],
        skill=skill,
        ece=ece,
        threshold=threshold,
        diagram=diagram,
        undefined_rates=undefined,
    )


def _round4(x: float | None) -> float | None:
    return None if x is None else round(x, 4)


def report_to_dict(report: EvaluationReport) -> dict:
    """JSON-compatible report: rates to 4 decimals, exact integers preserved."""
    c = report.counts
    return {
        "counts": {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn, "total": c.total},
        "prevalence": _round4(report.prevalence),
        "sensitivity": _round4(report.sensitivity),
        "specificity": _round4(report.specificity),
        "ppv": _round4(report.ppv),
        "npv": _round4(report.npv),
        "undefined_rates": dict(report.undefined_rates),
        "skill": {
            "bs": _round4(report.skill.bs),
            "bs_ref": _round4(report.skill.bs_ref),
            "bss": _round4(report.skill.bss),
            "reference_policy": report.skill.reference_policy,
        },
        "ece": _round4(report.ece),
        "threshold": report.threshold,
        "reliability_rule": report.diagram.rule,
        "reliability_bins": diagram_to_rows(report.diagram),
    }


def save_report(report: EvaluationReport, path: str | Path, extra: dict | None = None) -> None:
    doc = report_to_dict(report)
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def choose_threshold_for_sensitivity(s: PredictionSet, target_sensitivity: float) -> float:
    """Largest threshold whose sensitivity on ``s`` still meets the target.

    Maximizes specificity subject to the sensitivity constraint: with k =
    ceil(target * n_pos) detections required, the k-th largest positive
    score is the highest admissible cut.
    """
    if not (0.0 < target_sensitivity <= 1.0):
        raise ValueError(f"target sensitivity must be in (0, 1], got {target_sensitivity}")
    pos_scores = s.f[s.o == 1]
    if len(pos_scores) == 0:
        raise ValueError("cannot target sensitivity without positive outcomes")
    k = math.ceil(target_sensitivity * len(pos_scores))
    ordered = np.sort(pos_scores)[::-1]
    return float(ordered[k - 1])
