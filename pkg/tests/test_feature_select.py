import math
from collections import Counter

import numpy as np
import pytest

from loanscreen.data_model import FeatureSchema, Portfolio
from loanscreen.feature_select import (
    discretize_equal_frequency,
    eligible_features,
    mrmr_select,
    mutual_information,
)
from loanscreen.privacy import PrivacyError

# ---------------------------------------------------------------------------
# Independent oracles: dict-based plug-in MI and an exhaustive-scan greedy.
# Shared preprocessing (equal-frequency binning) comes from the library; the
# counting and the selection rule are re-implemented from scratch.
# ---------------------------------------------------------------------------


def oracle_mi(codes_x, codes_y):
    n = len(codes_x)
    joint = Counter(zip(codes_x.tolist(), codes_y.tolist()))
    px = Counter(codes_x.tolist())
    py = Counter(codes_y.tolist())
    total = 0.0
    for (a, b), c in sorted(joint.items()):
        total += (c / n) * math.log((c / n) / ((px[a] / n) * (py[b] / n)))
    return max(total, 0.0)


def oracle_codes(p, name):
    feat = p.feature(name)
    col = p.column(name)
    if feat.is_numeric_like:
        return discretize_equal_frequency(col)
    symbols = sorted({str(v) for v in col if v is not None})
    lookup = {s: i for i, s in enumerate(symbols)}
    return np.asarray([lookup[str(v)] if v is not None else len(symbols) for v in col])


def oracle_greedy(p, candidates, k):
    y = p.outcomes.astype(np.int64)
    codes = {name: oracle_codes(p, name) for name in candidates}
    relevance = {name: oracle_mi(codes[name], y) for name in candidates}
    selected = []
    remaining = list(candidates)
    while len(selected) < k:
        best_name, best_key = None, None
        for name in remaining:
            if selected:
                red = sum(oracle_mi(codes[name], codes[s]) for s in selected) / len(selected)
            else:
                red = 0.0
            score = relevance[name] - red
            key = (-score, -relevance[name], name)  # min of this = greedy winner
            if best_key is None or key < best_key:
                best_key, best_name = key, name
        selected.append(best_name)
        remaining.remove(best_name)
    return selected


def labeled_portfolio(columns, outcomes, kinds=None):
    kinds = kinds or {}
    schema = []
    np_columns = {}
    for name, values in columns.items():
        arr = np.asarray(values)
        if arr.dtype.kind in "OU":
            schema.append(FeatureSchema(name, "categorical", **kinds.get(name, {})))
            np_columns[name] = arr.astype(object)
        else:
            schema.append(FeatureSchema(name, "numeric", **kinds.get(name, {})))
            np_columns[name] = arr.astype(np.float64)
    ids = [f"r{i}" for i in range(len(outcomes))]
    return Portfolio(schema, ids, np_columns, outcomes)


# ---------------------------------------------------------------------------
# eligible_features
# ---------------------------------------------------------------------------


def test_eligible_counts_match_set_arithmetic():
    # 84 features: 30 common, 6 of the common ones bias-tagged -> 24 eligible
    schema = []
    for i in range(30):
        bias = "gender" if i < 6 else "none"
        schema.append(FeatureSchema(f"common_{i}", "numeric", bias_class=bias, availability="common"))
    for i in range(54):
        schema.append(FeatureSchema(f"vonly_{i}", "numeric", availability="validation_only"))
    assert len(schema) == 84
    eligible = eligible_features(schema)
    assert len(eligible) == 24
    assert all(name.startswith("common_") for name in eligible)


def test_eligible_empty_when_all_bias_tagged():
    schema = [FeatureSchema(f"f{i}", "numeric", bias_class="credit_history") for i in range(5)]
    assert eligible_features(schema) == []


def test_eligible_identity_when_unconstrained():
    schema = [FeatureSchema(f"f{i}", "numeric") for i in range(5)]
    assert eligible_features(schema) == [f"f{i}" for i in range(5)]


def test_eligible_excludes_direct_identifiers():
    schema = [
        FeatureSchema("id", "categorical", privacy_class="direct_identifier"),
        FeatureSchema("ok", "numeric"),
    ]
    assert eligible_features(schema) == ["ok"]


# ---------------------------------------------------------------------------
# mutual_information
# ---------------------------------------------------------------------------


def test_mi_of_identical_balanced_binary_is_ln2():
    x = np.array([0.0, 1.0] * 50)
    est = mutual_information(x, x)
    assert est.value == pytest.approx(math.log(2), abs=1e-12)


def test_mi_independence_exact_zero():
    # full 2x2 factorial: joint factorizes exactly, so MI is exactly 0
    x = np.array([0.0, 0.0, 1.0, 1.0] * 25)
    y = np.array([0.0, 1.0, 0.0, 1.0] * 25)
    assert mutual_information(x, y).value == 0.0


def test_mi_matches_hand_enumerated_2x2_table():
    # joint counts {(0,0):4,(0,1):1,(1,0):1,(1,1):4}
    x = np.array([0.0] * 5 + [1.0] * 5)
    y = np.array([0.0] * 4 + [1.0] + [0.0] + [1.0] * 4)
    expected = oracle_mi(x.astype(int), y.astype(int))
    assert expected == pytest.approx(0.19274475702175747, abs=1e-15)
    assert mutual_information(x, y).value == pytest.approx(expected, abs=1e-12)


def test_mi_symmetry_is_exact():
    rng = np.random.default_rng(0)
    x = rng.normal(size=200)
    y = rng.integers(0, 3, size=200).astype(float)
    assert mutual_information(x, y).value == mutual_information(y, x).value


def test_mi_relabeling_invariance_is_exact():
    rng = np.random.default_rng(1)
    labels = np.asarray(["a", "b", "c", "d"], dtype=object)
    relabeled = np.asarray(["zz", "m", "aa", "k"], dtype=object)
    idx = rng.integers(0, 4, size=300)
    y = rng.integers(0, 2, size=300).astype(float)
    assert mutual_information(labels[idx], y).value == mutual_information(relabeled[idx], y).value


def test_mi_zero_for_constant_variable():
    x = np.full(100, 3.14)
    y = np.random.default_rng(2).integers(0, 2, 100).astype(float)
    assert mutual_information(x, y).value == 0.0


def test_mi_errors():
    with pytest.raises(ValueError, match="length mismatch"):
        mutual_information(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError, match="at least 2"):
        mutual_information(np.zeros(1), np.zeros(1))


def test_mi_nonnegative_random():
    rng = np.random.default_rng(5)
    for _ in range(50):
        x = rng.normal(size=80)
        y = rng.integers(0, 2, 80).astype(float)
        assert mutual_information(x, y).value >= 0.0


def test_binning_invariant_under_monotone_transform():
    rng = np.random.default_rng(6)
    x = rng.lognormal(size=500)
    codes = discretize_equal_frequency(x)
    codes_t = discretize_equal_frequency(np.exp(x / 10.0))  # strictly increasing
    assert np.array_equal(codes, codes_t)


# ---------------------------------------------------------------------------
# mrmr_select
# ---------------------------------------------------------------------------


def test_mrmr_picks_outcome_copy_first():
    rng = np.random.default_rng(7)
    y = rng.integers(0, 2, 200)
    p = labeled_portfolio(
        {"copy": y.astype(float), "noise": rng.normal(size=200)},
        y,
    )
    sel = mrmr_select(p, ["copy", "noise"], k=1)
    assert sel.selected == ("copy",)
    assert sel.steps[0].redundancy == 0.0


def test_mrmr_redundancy_rejects_duplicate():
    rng = np.random.default_rng(8)
    n = 400
    y = rng.integers(0, 2, n)
    a = np.where(rng.random(n) < 0.1, 1 - y, y).astype(float)  # strong signal
    b = np.where(rng.random(n) < 0.45, 1 - y, y).astype(float)  # weak, independent noise
    p = labeled_portfolio({"featA": a, "featA_dup": a.copy(), "featB": b}, y)
    sel = mrmr_select(p, ["featA", "featA_dup", "featB"], k=2)
    assert sel.selected == ("featA", "featB")
    assert sel.selected == tuple(oracle_greedy(p, ["featA", "featA_dup", "featB"], 2))


def test_mrmr_exhaustion_returns_all_candidates():
    rng = np.random.default_rng(9)
    y = rng.integers(0, 2, 150)
    cols = {f"f{i}": rng.normal(size=150) for i in range(4)}
    p = labeled_portfolio(cols, y)
    sel = mrmr_select(p, list(cols), k=4)
    assert sorted(sel.selected) == sorted(cols)


def test_mrmr_argument_errors(small_portfolio):
    with pytest.raises(ValueError, match="k"):
        mrmr_select(small_portfolio, ["num_0"], k=0)
    with pytest.raises(ValueError, match="exceeds"):
        mrmr_select(small_portfolio, ["num_0"], k=2)


def test_mrmr_unlabeled_rejected():
    p = Portfolio(
        [FeatureSchema("a", "numeric")],
        ["r1", "r2", "r3"],
        {"a": np.arange(3.0)},
        [1, 0, -1],
    )
    with pytest.raises(ValueError, match="labeled"):
        mrmr_select(p, ["a"], k=1)


def test_mrmr_refuses_direct_identifiers():
    p = labeled_portfolio(
        {"tax": np.asarray(["a", "b"], dtype=object), "x": np.array([0.0, 1.0])},
        [0, 1],
        kinds={"tax": {"privacy_class": "direct_identifier"}},
    )
    with pytest.raises(PrivacyError, match="direct identifiers"):
        mrmr_select(p, ["x"], k=1)


def random_portfolio(rng):
    n = int(rng.integers(40, 500))
    n_feats = int(rng.integers(2, 13))
    y = rng.integers(0, 2, n)
    columns = {}
    for i in range(n_feats):
        style = rng.integers(0, 3)
        if style == 0:  # informative numeric
            columns[f"f{i:02d}"] = rng.normal(y * rng.uniform(0, 2), 1.0)
        elif style == 1:  # categorical
            symbols = np.asarray(["a", "b", "c", "d"], dtype=object)
            columns[f"f{i:02d}"] = symbols[rng.integers(0, 4, n)]
        else:  # pure noise
            columns[f"f{i:02d}"] = rng.normal(size=n)
    return labeled_portfolio(columns, y)


def test_mrmr_matches_exhaustive_oracle():
    rng = np.random.default_rng(1234)
    for _ in range(40):
        p = random_portfolio(rng)
        k = int(rng.integers(1, min(5, len(p.feature_names)) + 1))
        candidates = list(p.feature_names)
        sel = mrmr_select(p, candidates, k)
        assert list(sel.selected) == oracle_greedy(p, candidates, k)


def test_selection_invariant_under_monotone_transform():
    rng = np.random.default_rng(99)
    n = 300
    y = rng.integers(0, 2, n)
    base = {f"f{i}": rng.normal(y * (0.3 + 0.3 * i), 1.0) for i in range(5)}
    p1 = labeled_portfolio(base, y)
    transformed = dict(base)
    transformed["f2"] = np.exp(base["f2"])  # strictly increasing remap
    p2 = labeled_portfolio(transformed, y)
    s1 = mrmr_select(p1, list(base), k=3)
    s2 = mrmr_select(p2, list(base), k=3)
    assert s1.selected == s2.selected


def test_selection_report_rows():
    rng = np.random.default_rng(11)
    y = rng.integers(0, 2, 100)
    p = labeled_portfolio({"a": y.astype(float), "b": rng.normal(size=100)}, y)
    sel = mrmr_select(p, ["a", "b"], k=2)
    rows = sel.report_rows()
    assert [r["step"] for r in rows] == [1, 2]
    assert rows[0]["feature"] == "a"
    assert rows[0]["score"] == rows[0]["relevance"]
