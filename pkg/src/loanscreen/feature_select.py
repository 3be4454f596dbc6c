"""Bias-aware minimal-optimal feature selection.

Eligibility first removes prohibited borrower attributes (credit history,
gender, race/ethnicity and their tagged proxies) and anything not present in
both the historical and active portfolios. A greedy mutual-information
criterion then picks a small set that is maximally relevant to the bad-loan
label and minimally redundant with what is already selected.

The MI estimator is the plug-in estimate on a joint histogram: numerics are
discretized into equal-frequency bins (bin edges are order statistics, so
any strictly increasing rescaling of a feature leaves the estimate alone),
categoricals are used as-is, and missing values form their own bin.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_model import FeatureSchema, Portfolio
from .privacy import PrivacyError

MAX_EQUAL_FREQUENCY_BINS = 32


@dataclass(frozen=True)
class MutualInformationEstimate:
    """Plug-in mutual information between two variables, in nats."""

    feature_a: str
    feature_b: str
    value: float
    bins_used: tuple[int, int]


@dataclass(frozen=True)
class SelectionStep:
    feature: str
    relevance: float
    redundancy: float
    score: float


@dataclass(frozen=True)
class MrmrSelection:
    """Greedy selection result: chosen features in pick order plus their scores."""

    selected: tuple[str, ...]
    steps: tuple[SelectionStep, ...]
    k: int

    def report_rows(self) -> list[dict]:
        """Audit-trail rows: one per greedy step."""
        return [
            {
                "step": i + 1,
                "feature": s.feature,
                "relevance": s.relevance,
                "redundancy": s.redundancy,
                "score": s.score,
            }
            for i, s in enumerate(self.steps)
        ]


def eligible_features(schema: Sequence[FeatureSchema]) -> list[str]:
    """Features allowed into selection: unbiased, shared, and identifier-free."""
    return [
        f.name
        for f in schema
        if f.bias_class == "none" and f.availability == "common" and f.privacy_class != "direct_identifier"
    ]


def default_bin_count(n: int) -> int:
    """Equal-frequency bin count: ceil(sqrt(n)) capped at 32."""
    return min(int(np.ceil(np.sqrt(n))), MAX_EQUAL_FREQUENCY_BINS)


def discretize_equal_frequency(values: np.ndarray, bins: int | None = None) -> np.ndarray:
    """Map a numeric vector to integer bin codes by equal-frequency binning.

    Bin edges are order statistics of the non-missing values (inverted-CDF
    quantiles, no interpolation), so codes are invariant under strictly
    increasing transforms. NaN gets its own code, one past the last bin.
    """
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if bins is None:
        bins = default_bin_count(n)
    missing = np.isnan(values)
    present = values[~missing]
    codes = np.empty(n, dtype=np.int64)
    if len(present) == 0:
        codes[:] = 0
        return codes
    if bins < 2 or len(present) < 2:
        edges = np.empty(0, dtype=np.float64)
    else:
        qs = np.arange(1, bins) / bins
        edges = np.unique(np.quantile(present, qs, method="inverted_cdf"))
    codes[~missing] = np.searchsorted(edges, present, side="left")
    codes[missing] = len(edges) + 1
    return codes


def _codes_for(values: np.ndarray, bins: int | None) -> tuple[np.ndarray, int]:
    """Integer codes plus the number of distinct codes for any value vector."""
    arr = np.asarray(values)
    if arr.dtype == object or arr.dtype.kind in ("U", "S"):
        cleaned = np.asarray(["\x00missing" if v is None else str(v) for v in arr], dtype=object)
        _, codes = np.unique(cleaned, return_inverse=True)
        return codes.astype(np.int64), int(codes.max()) + 1 if len(codes) else 0
    codes = discretize_equal_frequency(arr.astype(np.float64), bins)
    _, dense = np.unique(codes, return_inverse=True)
    return dense.astype(np.int64), int(dense.max()) + 1 if len(dense) else 0


def mutual_information(
    x: np.ndarray | Sequence,
    y: np.ndarray | Sequence,
    bins: int | None = None,
    feature_a: str = "x",
    feature_b: str = "y",
) -> MutualInformationEstimate:
    """Plug-in mutual information I(X;Y) over the joint histogram, in nats.

    Bit-for-bit symmetric in its arguments, and invariant under relabeling
    categorical symbols: per-cell contributions are summed in sorted order,
    so neither argument order nor label permutations can change the result.
    Numeric vectors mark missing values as NaN; categorical vectors
    (strings, None for missing) are taken as-is.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("mutual information needs at least 2 observations")
    codes_a, n_a = _codes_for(x, bins)
    codes_b, n_b = _codes_for(y, bins)
    value = _plugin_mi(codes_a, codes_b)
    return MutualInformationEstimate(feature_a, feature_b, value, (n_a, n_b))


def _plugin_mi(codes_x: np.ndarray, codes_y: np.ndarray) -> float:
    n = len(codes_x)
    kx = int(codes_x.max()) + 1
    ky = int(codes_y.max()) + 1
    # integer counts first: every probability is an exact count/n, so each
    # cell's contribution is bitwise identical under relabeling or swapping
    joint_counts = np.zeros((kx, ky), dtype=np.int64)
    np.add.at(joint_counts, (codes_x, codes_y), 1)
    joint = joint_counts / n
    px = np.bincount(codes_x, minlength=kx) / n
    py = np.bincount(codes_y, minlength=ky) / n
    outer = np.outer(px, py)
    mask = joint > 0
    contributions = joint[mask] * np.log(joint[mask] / outer[mask])
    value = float(np.sum(np.sort(contributions)))
    # the plug-in estimate is nonnegative in exact arithmetic; clip rounding dust
    return max(value, 0.0)


def _reject_direct_identifiers(p: Portfolio) -> None:
    direct = [f.name for f in p.schema if f.privacy_class == "direct_identifier"]
    if direct:
        raise PrivacyError(f"portfolio still contains direct identifiers: {direct}")


def mrmr_select(p: Portfolio, candidates: Sequence[str], k: int, bins: int | None = None) -> MrmrSelection:
    """Greedy maximum-relevance minimum-redundancy selection.

    Step 1 takes the candidate with the highest MI against the outcome; each
    later step maximizes relevance minus the mean MI against the features
    already selected. Ties break on higher relevance, then lexicographic
    name, so runs are reproducible no matter how the MI table was computed.
    """
    _reject_direct_identifiers(p)
    candidates = list(candidates)
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if k > len(candidates):
        raise ValueError(f"k={k} exceeds the {len(candidates)} candidates")
    if len(set(candidates)) != len(candidates):
        raise ValueError("duplicate candidate names")
    if not bool(p.labeled_mask.all()):
        raise ValueError("mrmr_select requires a fully labeled portfolio")
    for name in candidates:
        p.feature(name)  # raises SchemaError on unknown names

    outcome_codes = p.outcomes.astype(np.int64)
    feature_codes: dict[str, np.ndarray] = {}
    for name in candidates:
        codes, _ = _codes_for(p.column(name), bins)
        feature_codes[name] = codes

    relevance = {name: _plugin_mi(feature_codes[name], outcome_codes) for name in candidates}

    selected: list[str] = []
    steps: list[SelectionStep] = []
    remaining = set(candidates)
    pair_cache: dict[tuple[str, str], float] = {}

    def redundancy_of(name: str) -> float:
        total = 0.0
        for s in selected:
            key = (name, s) if name <= s else (s, name)
            if key not in pair_cache:
                pair_cache[key] = _plugin_mi(feature_codes[key[0]], feature_codes[key[1]])
            total += pair_cache[key]
        return total / len(selected)

    for _ in range(k):
        best: tuple[float, float, str] | None = None
        best_red = 0.0
        for name in sorted(remaining):
            red = redundancy_of(name) if selected else 0.0
            score = relevance[name] - red
            key = (score, relevance[name], name)
            # higher score wins; then higher relevance; then earlier name
            if best is None or key[0] > best[0] or (
                key[0] == best[0] and (key[1] > best[1] or (key[1] == best[1] and key[2] < best[2]))
            ):
                best = key
                best_red = red
        assert best is not None
        score, rel, name = best
        selected.append(name)
        remaining.remove(name)
        steps.append(SelectionStep(feature=name, relevance=rel, redundancy=best_red, score=score))

    return MrmrSelection(selected=tuple(selected), steps=tuple(steps), k=k)
