"""Regularized second-order tree boosting for binary bad-loan classification.

Trees are regression trees over logistic-loss gradients and hessians, grown
depth-first with exact greedy split finding (a sorted scan over every
distinct threshold, no histogram approximation -- affordable at desk scale
and directly checkable). Missing values learn their own default direction by
trying both sides. Leaf weights are the closed-form second-order optimum
-G/(H+lambda).

Everything is deterministic: gain comparisons use a total order (gain, then
feature name, then threshold), so training with 1 or 8 worker threads yields
bit-identical models.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data_model import LoanRecord, Portfolio, SchemaError
from .privacy import PrivacyError

MODEL_FORMAT = "loanscreen.model"
MODEL_FORMAT_VERSION = 1

_PROBA_EPS = 1e-15


def sigmoid(margin):
    """Numerically stable logistic function, elementwise."""
    m = np.asarray(margin, dtype=np.float64)
    scalar = m.ndim == 0
    m = np.atleast_1d(m)
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    em = np.exp(m[~pos])
    out[~pos] = em / (1.0 + em)
    return float(out[0]) if scalar else out


def logistic_loss(margin, outcome):
    """Mean logistic loss of raw margins against 0/1 outcomes (stable softplus form)."""
    m = np.asarray(margin, dtype=np.float64)
    y = np.asarray(outcome, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, m) - y * m))


def logistic_loss_grad_hess(margin: float, outcome: int) -> tuple[float, float]:
    """Gradient and hessian of the logistic loss at one margin.

    g = p - outcome and h = p(1-p) with p = logistic(margin); h stays
    strictly positive (p is kept away from exact 0/1).
    """
    if not math.isfinite(margin):
        raise ValueError(f"margin must be finite, got {margin}")
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome}")
    p = min(max(sigmoid(margin), _PROBA_EPS), 1.0 - _PROBA_EPS)
    return p - outcome, p * (1.0 - p)


def split_gain(gl: float, hl: float, gr: float, hr: float, reg_lambda: float, gamma: float) -> float:
    """Second-order gain of a split: regularized structure score of the two
    children minus the parent, minus the per-split penalty gamma."""
    if hl < 0 or hr < 0:
        raise ValueError("hessian sums must be nonnegative")

    def term(g, h):
        den = h + reg_lambda
        if den > 0:
            return g * g / den
        return 0.0 if g == 0 else math.inf

    return 0.5 * (term(gl, hl) + term(gr, hr) - term(gl + gr, hl + hr)) - gamma


@dataclass(frozen=True)
class TreeNode:
    """One node of a regression tree.

    A leaf has ``weight`` set; an internal node has ``feature`` plus either a
    numeric ``threshold`` (go left when value < threshold) or a ``categories``
    set (go left when the value is in the set, right otherwise, which also
    covers categories unseen in training). Missing values follow
    ``missing_left``, the direction learned during training.
    """

    weight: float | None = None
    feature: str | None = None
    threshold: float | None = None
    categories: tuple[str, ...] | None = None
    missing_left: bool = True
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"leaf": self.weight}
        d: dict = {"feature": self.feature, "missing_left": self.missing_left}
        if self.threshold is not None:
            d["threshold"] = self.threshold
        else:
            d["categories"] = list(self.categories or ())
        d["left"] = self.left.to_dict()
        d["right"] = self.right.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "leaf" in d:
            return cls(weight=float(d["leaf"]))
        return cls(
            feature=d["feature"],
            threshold=d.get("threshold"),
            categories=tuple(d["categories"]) if "categories" in d else None,
            missing_left=bool(d["missing_left"]),
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )


@dataclass(frozen=True)
class TrainConfig:
    """Boosting hyperparameters. Defaults are conservative and config-exposed."""

    n_trees: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_hessian: float = 1.0
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must be in (0, 1]")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_hessian < 0:
            raise ValueError("reg_lambda, gamma and min_child_hessian must be >= 0")
        if not (0.0 < self.subsample <= 1.0):
            raise ValueError("subsample must be in (0, 1]")


@dataclass(frozen=True)
class BoostedModel:
    """Trained ensemble: margin = base_margin + learning_rate * sum(tree outputs)."""

    trees: tuple[TreeNode, ...]
    base_margin: float
    learning_rate: float
    reg_lambda: float
    gamma: float
    max_depth: int
    feature_names: tuple[str, ...]
    feature_kinds: tuple[str, ...]
    train_config: TrainConfig
    training_loss: tuple[float, ...] = field(default=())

    def payload_dict(self) -> dict:
        cfg = self.train_config
        return {
            "format": MODEL_FORMAT,
            "format_version": MODEL_FORMAT_VERSION,
            "base_margin": self.base_margin,
            "learning_rate": self.learning_rate,
            "reg_lambda": self.reg_lambda,
            "gamma": self.gamma,
            "max_depth": self.max_depth,
            "feature_names": list(self.feature_names),
            "feature_kinds": list(self.feature_kinds),
            "train_config": {
                "n_trees": cfg.n_trees,
                "max_depth": cfg.max_depth,
                "learning_rate": cfg.learning_rate,
                "reg_lambda": cfg.reg_lambda,
                "gamma": cfg.gamma,
                "min_child_hessian": cfg.min_child_hessian,
                "subsample": cfg.subsample,
                "seed": cfg.seed,
            },
            "training_loss": list(self.training_loss),
            "trees": [t.to_dict() for t in self.trees],
        }

    def content_hash(self) -> str:
        canonical = json.dumps(self.payload_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict:
        d = self.payload_dict()
        d["content_hash"] = self.content_hash()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a model document (format={d.get('format')!r})")
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {d.get('format_version')!r}")
        model = cls(
            trees=tuple(TreeNode.from_dict(t) for t in d["trees"]),
            base_margin=float(d["base_margin"]),
            learning_rate=float(d["learning_rate"]),
            reg_lambda=float(d["reg_lambda"]),
            gamma=float(d["gamma"]),
            max_depth=int(d["max_depth"]),
            feature_names=tuple(d["feature_names"]),
            feature_kinds=tuple(d["feature_kinds"]),
            train_config=TrainConfig(**d["train_config"]),
            training_loss=tuple(d["training_loss"]),
        )
        stored = d.get("content_hash")
        if stored is not None and stored != model.content_hash():
            raise ValueError("model content hash mismatch: document was modified")
        return model


def save_model(model: BoostedModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path: str | Path) -> BoostedModel:
    with open(path, "r", encoding="utf-8") as fh:
        return BoostedModel.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Column:
    kind: str  # "numeric" or "categorical"
    values: np.ndarray  # float64 for numeric; int codes for categorical (-1 = missing)
    categories: tuple[str, ...] = ()


def _build_columns(p: Portfolio, features: Sequence[str]) -> dict[str, _Column]:
    cols: dict[str, _Column] = {}
    for name in features:
        feat = p.feature(name)
        raw = p.column(name)
        if feat.is_numeric_like:
            cols[name] = _Column("numeric", np.asarray(raw, dtype=np.float64))
        else:
            present = sorted({str(v) for v in raw if v is not None})
            lookup = {c: i for i, c in enumerate(present)}
            codes = np.fromiter(
                (lookup[str(v)] if v is not None else -1 for v in raw), dtype=np.int64, count=len(raw)
            )
            cols[name] = _Column("categorical", codes, tuple(present))
    return cols


@dataclass(frozen=True)
class _Candidate:
    gain: float
    feature: str
    threshold: float | None
    categories: tuple[str, ...] | None
    missing_left: bool


def _child_terms(gl, hl, gr, hr, reg_lambda):
    with np.errstate(divide="ignore", invalid="ignore"):
        tl = np.where(hl + reg_lambda > 0, gl * gl / (hl + reg_lambda), 0.0)
        tr = np.where(hr + reg_lambda > 0, gr * gr / (hr + reg_lambda), 0.0)
    return tl + tr


def _scan_numeric(vals, g, h, cfg: TrainConfig) -> tuple[float, float, bool] | None:
    """Best (gain, threshold, missing_left) over all distinct-value boundaries."""
    missing = np.isnan(vals)
    pv = vals[~missing]
    if len(pv) < 2:
        return None
    pg = g[~missing]
    ph = h[~missing]
    order = np.argsort(pv, kind="stable")
    sv = pv[order]
    boundaries = np.flatnonzero(sv[:-1] < sv[1:])
    if len(boundaries) == 0:
        return None
    cg = np.cumsum(pg[order])
    ch = np.cumsum(ph[order])
    gl0 = cg[boundaries]
    hl0 = ch[boundaries]
    gr0 = cg[-1] - gl0
    hr0 = ch[-1] - hl0
    gm = float(g[missing].sum())
    hm = float(h[missing].sum())
    g_total = cg[-1] + gm
    h_total = ch[-1] + hm
    den_parent = h_total + cfg.reg_lambda
    parent_term = (g_total * g_total / den_parent) if den_parent > 0 else 0.0

    best: tuple[float, int, bool] | None = None
    for missing_left in (True, False):
        if missing_left:
            gl, hl, gr, hr = gl0 + gm, hl0 + hm, gr0, hr0
        else:
            gl, hl, gr, hr = gl0, hl0, gr0 + gm, hr0 + hm
        gains = 0.5 * (_child_terms(gl, hl, gr, hr, cfg.reg_lambda) - parent_term) - cfg.gamma
        ok = (hl >= cfg.min_child_hessian) & (hr >= cfg.min_child_hessian)
        gains = np.where(ok, gains, -np.inf)
        i = int(np.argmax(gains))  # first max = smallest threshold
        gain = float(gains[i])
        if gain == -np.inf:
            continue
        # higher gain wins, then smaller threshold; missing-left scans first
        # so equal (gain, threshold) keeps the missing-left direction
        if best is None or gain > best[0] or (gain == best[0] and i < best[1]):
            best = (gain, i, missing_left)
    if best is None:
        return None
    gain, i, missing_left = best
    b = boundaries[i]
    threshold = (sv[b] + sv[b + 1]) / 2.0
    return gain, float(threshold), missing_left


def _scan_categorical(codes, categories, g, h, cfg: TrainConfig) -> tuple[float, tuple[str, ...], bool] | None:
    """Best (gain, left-category set, missing_left) via the sorted-ratio partition scan."""
    missing = codes < 0
    pc = codes[~missing]
    if len(pc) == 0:
        return None
    n_cat = len(categories)
    gc = np.bincount(pc, weights=g[~missing], minlength=n_cat)
    hc = np.bincount(pc, weights=h[~missing], minlength=n_cat)
    counts = np.bincount(pc, minlength=n_cat)
    present = np.flatnonzero(counts > 0)
    if len(present) < 2:
        return None
    # second-order optimal partitions are prefixes of the G/H-ratio ordering
    ratios = gc[present] / (hc[present] + 1e-12)
    names = np.asarray(categories)[present]
    order = present[np.lexsort((names, ratios))]
    og = gc[order]
    oh = hc[order]
    cg = np.cumsum(og)
    ch = np.cumsum(oh)
    gl0 = cg[:-1]
    hl0 = ch[:-1]
    gr0 = cg[-1] - gl0
    hr0 = ch[-1] - hl0
    gm = float(g[missing].sum())
    hm = float(h[missing].sum())
    g_total = cg[-1] + gm
    h_total = ch[-1] + hm
    den_parent = h_total + cfg.reg_lambda
    parent_term = (g_total * g_total / den_parent) if den_parent > 0 else 0.0

    best: tuple[float, int, bool] | None = None
    for missing_left in (True, False):
        if missing_left:
            gl, hl, gr, hr = gl0 + gm, hl0 + hm, gr0, hr0
        else:
            gl, hl, gr, hr = gl0, hl0, gr0 + gm, hr0 + hm
        gains = 0.5 * (_child_terms(gl, hl, gr, hr, cfg.reg_lambda) - parent_term) - cfg.gamma
        ok = (hl >= cfg.min_child_hessian) & (hr >= cfg.min_child_hessian)
        gains = np.where(ok, gains, -np.inf)
        i = int(np.argmax(gains))
        gain = float(gains[i])
        if gain == -np.inf:
            continue
        if best is None or gain > best[0] or (gain == best[0] and i < best[1]):
            best = (gain, i, missing_left)
    if best is None:
        return None
    gain, i, missing_left = best
    left_codes = order[: i + 1]
    left_categories = tuple(sorted(categories[c] for c in left_codes))
    return gain, left_categories, missing_left


def _best_candidate(
    columns: Mapping[str, _Column],
    feature_order: Sequence[str],
    rows: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    cfg: TrainConfig,
    executor: ThreadPoolExecutor | None,
) -> _Candidate | None:
    gr = g[rows]
    hr = h[rows]

    def scan(name: str) -> _Candidate | None:
        col = columns[name]
        if col.kind == "numeric":
            res = _scan_numeric(col.values[rows], gr, hr, cfg)
            if res is None:
                return None
            gain, threshold, missing_left = res
            return _Candidate(gain, name, threshold, None, missing_left)
        res = _scan_categorical(col.values[rows], col.categories, gr, hr, cfg)
        if res is None:
            return None
        gain, cats, missing_left = res
        return _Candidate(gain, name, None, cats, missing_left)

    if executor is None:
        results = [scan(name) for name in feature_order]
    else:
        results = list(executor.map(scan, feature_order))

    best: _Candidate | None = None
    for cand in results:  # feature_order is fixed, so this reduce is thread-count independent
        if cand is None:
            continue
        if best is None or cand.gain > best.gain or (cand.gain == best.gain and cand.feature < best.feature):
            best = cand
    return best


def _partition(column: _Column, cand: _Candidate, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals = column.values[rows]
    if cand.threshold is not None:
        missing = np.isnan(vals)
        left = vals < cand.threshold
    else:
        missing = vals < 0
        left_codes = {i for i, c in enumerate(column.categories) if c in set(cand.categories)}
        left = np.isin(vals, sorted(left_codes))
    left = np.where(missing, cand.missing_left, left)
    return rows[left], rows[~left]


def _grow_tree(
    columns: Mapping[str, _Column],
    feature_order: Sequence[str],
    rows: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    cfg: TrainConfig,
    executor: ThreadPoolExecutor | None,
) -> TreeNode:
    def leaf(idx: np.ndarray) -> TreeNode:
        gs = float(g[idx].sum())
        hs = float(h[idx].sum())
        den = hs + cfg.reg_lambda
        return TreeNode(weight=(-gs / den) if den > 0 else 0.0)

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        if depth >= cfg.max_depth or len(idx) < 2:
            return leaf(idx)
        cand = _best_candidate(columns, feature_order, idx, g, h, cfg, executor)
        if cand is None or cand.gain <= 0.0:
            return leaf(idx)
        left_rows, right_rows = _partition(columns[cand.feature], cand, idx)
        if len(left_rows) == 0 or len(right_rows) == 0:
            return leaf(idx)
        return TreeNode(
            feature=cand.feature,
            threshold=cand.threshold,
            categories=cand.categories,
            missing_left=cand.missing_left,
            left=grow(left_rows, depth + 1),
            right=grow(right_rows, depth + 1),
        )

    return grow(rows, 0)


def _apply_tree_batch(tree: TreeNode, columns: Mapping[str, _Column], n: int) -> np.ndarray:
    out = np.empty(n, dtype=np.float64)
    stack = [(tree, np.arange(n, dtype=np.int64))]
    while stack:
        node, idx = stack.pop()
        if len(idx) == 0:
            continue
        if node.is_leaf:
            out[idx] = node.weight
            continue
        col = columns[node.feature]
        vals = col.values[idx]
        if node.threshold is not None:
            missing = np.isnan(vals)
            left = vals < node.threshold
        else:
            cat_set = set(node.categories or ())
            member_codes = sorted(i for i, c in enumerate(col.categories) if c in cat_set)
            missing = vals < 0
            left = np.isin(vals, member_codes)
        left = np.where(missing, node.missing_left, left)
        stack.append((node.left, idx[left]))
        stack.append((node.right, idx[~left]))
    return out


def train(p: Portfolio, features: Sequence[str], cfg: TrainConfig, n_threads: int = 1) -> BoostedModel:
    """Fit the boosted ensemble on a labeled portfolio.

    ``n_threads`` only controls how the per-feature split scans are
    scheduled; the result is bit-identical for any thread count.
    """
    if not features:
        raise ValueError("feature list is empty")
    direct = [f.name for f in p.schema if f.privacy_class == "direct_identifier"]
    if direct:
        raise PrivacyError(f"portfolio still contains direct identifiers: {direct}")
    for name in features:
        p.feature(name)
    if not bool(p.labeled_mask.all()):
        raise ValueError("training requires a fully labeled portfolio")
    y = p.outcomes.astype(np.float64)
    n_pos = int((y == 1).sum())
    if n_pos == 0 or n_pos == len(y):
        raise ValueError("training requires both outcome classes")

    feature_order = list(features)
    columns = _build_columns(p, feature_order)
    n = len(p)
    prior = n_pos / n
    base_margin = math.log(prior / (1.0 - prior))

    margins = np.full(n, base_margin, dtype=np.float64)
    trees: list[TreeNode] = []
    losses = [logistic_loss(margins, y)]
    seed_u = cfg.seed % (2**64)

    executor = ThreadPoolExecutor(max_workers=n_threads) if n_threads > 1 else None
    try:
        for t in range(cfg.n_trees):
            probs = np.clip(sigmoid(margins), _PROBA_EPS, 1.0 - _PROBA_EPS)
            g = probs - y
            h = probs * (1.0 - probs)
            if cfg.subsample < 1.0:
                # per-round PCG64 substream seeded with (seed, round index)
                rng = np.random.default_rng((seed_u, t))
                m = max(int(round(cfg.subsample * n)), 1)
                rows = np.sort(rng.permutation(n)[:m]).astype(np.int64)
            else:
                rows = np.arange(n, dtype=np.int64)
            tree = _grow_tree(columns, feature_order, rows, g, h, cfg, executor)
            trees.append(tree)
            margins = margins + cfg.learning_rate * _apply_tree_batch(tree, columns, n)
            losses.append(logistic_loss(margins, y))
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    kinds = tuple("categorical" if columns[f].kind == "categorical" else "numeric" for f in feature_order)
    return BoostedModel(
        trees=tuple(trees),
        base_margin=base_margin,
        learning_rate=cfg.learning_rate,
        reg_lambda=cfg.reg_lambda,
        gamma=cfg.gamma,
        max_depth=cfg.max_depth,
        feature_names=tuple(feature_order),
        feature_kinds=kinds,
        train_config=cfg,
        training_loss=tuple(losses),
    )


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def _walk(node: TreeNode, values: Mapping[str, object]) -> float:
    while not node.is_leaf:
        v = values.get(node.feature)
        if node.threshold is not None:
            if v is None or (isinstance(v, float) and math.isnan(v)):
                go_left = node.missing_left
            else:
                go_left = float(v) < node.threshold
        elif v is None:
            go_left = node.missing_left
        else:
            go_left = str(v) in node.categories
        node = node.left if go_left else node.right
    return node.weight


def predict_margin(model: BoostedModel, record: LoanRecord) -> float:
    """Raw margin for one record: base_margin + learning_rate * sum(trees)."""
    total = 0.0
    for tree in model.trees:
        total += _walk(tree, record.values)
    return model.base_margin + model.learning_rate * total


def predict_proba(model: BoostedModel, record: LoanRecord) -> float:
    """Bad-loan probability for one record, strictly inside (0, 1)."""
    p = sigmoid(predict_margin(model, record))
    return float(min(max(p, _PROBA_EPS), 1.0 - _PROBA_EPS))


def predict_margin_batch(model: BoostedModel, p: Portfolio) -> np.ndarray:
    """Vectorized margins for a whole portfolio."""
    for name, kind in zip(model.feature_names, model.feature_kinds):
        feat = p.feature(name)
        have = "numeric" if feat.is_numeric_like else "categorical"
        if have != kind:
            raise SchemaError(f"feature {name!r} is {have} here but the model expects {kind}")
    columns = _build_columns(p, model.feature_names)
    n = len(p)
    margins = np.full(n, model.base_margin, dtype=np.float64)
    for tree in model.trees:
        margins += model.learning_rate * _apply_tree_batch(tree, columns, n)
    return margins


def predict_proba_batch(model: BoostedModel, p: Portfolio) -> np.ndarray:
    probs = sigmoid(predict_margin_batch(model, p))
    return np.clip(probs, _PROBA_EPS, 1.0 - _PROBA_EPS)
