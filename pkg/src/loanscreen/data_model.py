"""Loan-portfolio data model: schemas, records, CSV ingestion, splitting and balancing.

Portfolios are stored column-wise (numpy arrays) for speed but expose a
record-oriented view matching how loan files are audited. All randomized
operations take an explicit 64-bit seed and draw from numpy's PCG64
generator (``numpy.random.default_rng``) so every run is reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

FEATURE_KINDS = ("numeric", "categorical", "boolean")
PRIVACY_CLASSES = ("direct_identifier", "quasi_identifier", "free")
BIAS_CLASSES = ("credit_history", "gender", "race_ethnicity", "none")
AVAILABILITIES = ("train_only", "validation_only", "common")
PORTFOLIO_KINDS = ("train_test", "validation", "synthetic")

RECORD_ID_COLUMN = "record_id"
OUTCOME_COLUMN = "outcome"

UNLABELED = -1

_TRUE_STRINGS = frozenset({"1", "true", "t", "yes"})
_FALSE_STRINGS = frozenset({"0", "false", "f", "no"})


class SchemaError(ValueError):
    """A schema definition or schema/data mismatch problem."""


class IngestError(ValueError):
    """A CSV cell or header that cannot be ingested; carries row/column context."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        if row is not None and column is not None:
            message = f"{message} (row {row}, column {column!r})"
        elif column is not None:
            message = f"{message} (column {column!r})"
        super().__init__(message)


@dataclass(frozen=True)
class FeatureSchema:
    """Metadata for one portfolio feature.

    ``privacy_class`` drives the privacy transforms, ``bias_class`` marks
    prohibited borrower attributes (and their proxies), and ``availability``
    records whether the feature exists in the historical train-test extract,
    the active validation portfolio, or both.
    """

    name: str
    kind: str
    privacy_class: str = "free"
    bias_class: str = "none"
    availability: str = "common"

    def __post_init__(self):
        if not self.name:
            raise SchemaError("feature name must be non-empty")
        if self.name in (RECORD_ID_COLUMN, OUTCOME_COLUMN):
            raise SchemaError(f"feature name {self.name!r} is reserved")
        if self.kind not in FEATURE_KINDS:
            raise SchemaError(f"unknown feature kind {self.kind!r} for {self.name!r}")
        if self.privacy_class not in PRIVACY_CLASSES:
            raise SchemaError(f"unknown privacy class {self.privacy_class!r} for {self.name!r}")
        if self.bias_class not in BIAS_CLASSES:
            raise SchemaError(f"unknown bias class {self.bias_class!r} for {self.name!r}")
        if self.availability not in AVAILABILITIES:
            raise SchemaError(f"unknown availability {self.availability!r} for {self.name!r}")

    @property
    def is_numeric_like(self) -> bool:
        return self.kind in ("numeric", "boolean")


@dataclass(frozen=True)
class LoanRecord:
    """One exposure: an opaque id, per-feature values, and the bad-loan outcome.

    ``outcome`` is 1 for a bad loan, 0 otherwise, None when unlabeled.
    Missing feature values are None.
    """

    record_id: str
    values: Mapping[str, object]
    outcome: int | None


def _check_schema(schema: Sequence[FeatureSchema]) -> tuple[FeatureSchema, ...]:
    schema = tuple(schema)
    names = [f.name for f in schema]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise SchemaError(f"duplicate feature names in schema: {dupes}")
    return schema


class Portfolio:
    """A collection of loan records plus the schema describing their features.

    Immutable after construction; all transforms return new portfolios.
    """

    def __init__(
        self,
        schema: Sequence[FeatureSchema],
        record_ids: Sequence[str],
        columns: Mapping[str, np.ndarray],
        outcomes: np.ndarray | Sequence[int],
        kind: str = "synthetic",
        perturbed_features: Sequence[str] = (),
    ):
        if kind not in PORTFOLIO_KINDS:
            raise SchemaError(f"unknown portfolio kind {kind!r}")
        self.schema = _check_schema(schema)
        self._by_name = {f.name: f for f in self.schema}
        self.kind = kind
        self.record_ids = tuple(str(r) for r in record_ids)
        if len(set(self.record_ids)) != len(self.record_ids):
            raise SchemaError("record_ids are not unique")
        n = len(self.record_ids)

        self.outcomes = np.asarray(outcomes, dtype=np.int64)
        self.outcomes.setflags(write=False)
        if self.outcomes.shape != (n,):
            raise SchemaError("outcomes length does not match record count")
        bad = set(np.unique(self.outcomes)) - {0, 1, UNLABELED}
        if bad:
            raise SchemaError(f"outcome values must be 0, 1 or unlabeled; got {sorted(bad)}")

        cols: dict[str, np.ndarray] = {}
        for feat in self.schema:
            if feat.name not in columns:
                raise SchemaError(f"missing column for schema feature {feat.name!r}")
            raw = columns[feat.name]
            if feat.is_numeric_like:
                col = np.asarray(raw, dtype=np.float64)
            else:
                col = np.asarray(raw, dtype=object)
            if col.shape != (n,):
                raise SchemaError(f"column {feat.name!r} length does not match record count")
            col = col.copy()
            col.setflags(write=False)
            cols[feat.name] = col
        extra = set(columns) - set(cols)
        if extra:
            raise SchemaError(f"columns not described by schema: {sorted(extra)}")
        self._columns = cols
        self.perturbed_features = tuple(perturbed_features)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_records(
        cls,
        schema: Sequence[FeatureSchema],
        records: Sequence[LoanRecord],
        kind: str = "synthetic",
        perturbed_features: Sequence[str] = (),
    ) -> "Portfolio":
        schema = _check_schema(schema)
        record_ids = [r.record_id for r in records]
        outcomes = [UNLABELED if r.outcome is None else int(r.outcome) for r in records]
        columns: dict[str, list] = {f.name: [] for f in schema}
        for rec in records:
            for feat in schema:
                v = rec.values.get(feat.name)
                if feat.is_numeric_like:
                    columns[feat.name].append(np.nan if v is None else float(v))
                else:
                    columns[feat.name].append(None if v is None else str(v))
        cols = {
            f.name: np.asarray(columns[f.name], dtype=np.float64 if f.is_numeric_like else object)
            for f in schema
        }
        if not records:
            cols = {f.name: np.empty(0, dtype=np.float64 if f.is_numeric_like else object) for f in schema}
        return cls(schema, record_ids, cols, outcomes, kind=kind, perturbed_features=perturbed_features)

    # -- basic accessors ---------------------------------------------------

    def __len__(self) -> int:
        return len(self.record_ids)

    @property
    def n_records(self) -> int:
        return len(self.record_ids)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.schema)

    def feature(self, name: str) -> FeatureSchema:
        try:
            return self._by_name[name]
        except KeyError:
            raise SchemaError(f"unknown feature {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        if name not in self._columns:
            raise SchemaError(f"unknown feature {name!r}")
        return self._columns[name]

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.outcomes != UNLABELED

    @property
    def prevalence(self) -> float:
        """Share of bad loans among labeled records."""
        labeled = self.labeled_mask
        n = int(labeled.sum())
        if n == 0:
            raise ValueError("prevalence undefined: portfolio has no labeled records")
        return float((self.outcomes[labeled] == 1).sum()) / n

    def record(self, i: int) -> LoanRecord:
        values = {}
        for feat in self.schema:
            v = self._columns[feat.name][i]
            if feat.is_numeric_like:
                values[feat.name] = None if np.isnan(v) else float(v)
            else:
                values[feat.name] = v
        out = int(self.outcomes[i])
        return LoanRecord(self.record_ids[i], values, None if out == UNLABELED else out)

    def iter_records(self) -> Iterator[LoanRecord]:
        for i in range(len(self)):
            yield self.record(i)

    @property
    def records(self) -> list[LoanRecord]:
        return list(self.iter_records())

    # -- derivation --------------------------------------------------------

    def subset(self, indices: Sequence[int], kind: str | None = None) -> "Portfolio":
        idx = np.asarray(indices, dtype=np.int64)
        return Portfolio(
            self.schema,
            [self.record_ids[i] for i in idx],
            {name: col[idx] for name, col in self._columns.items()},
            self.outcomes[idx],
            kind=kind or self.kind,
            perturbed_features=self.perturbed_features,
        )

    def drop_features(self, names: Sequence[str]) -> "Portfolio":
        drop = set(names)
        keep = [f for f in self.schema if f.name not in drop]
        return Portfolio(
            keep,
            self.record_ids,
            {f.name: self._columns[f.name] for f in keep},
            self.outcomes,
            kind=self.kind,
            perturbed_features=tuple(p for p in self.perturbed_features if p not in drop),
        )

    def replace_columns(
        self, new_columns: Mapping[str, np.ndarray], perturbed_features: Sequence[str] | None = None
    ) -> "Portfolio":
        cols = dict(self._columns)
        for name, col in new_columns.items():
            if name not in cols:
                raise SchemaError(f"unknown feature {name!r}")
            cols[name] = np.asarray(col)
        return Portfolio(
            self.schema,
            self.record_ids,
            cols,
            self.outcomes,
            kind=self.kind,
            perturbed_features=self.perturbed_features if perturbed_features is None else perturbed_features,
        )

    def content_hash(self) -> str:
        """SHA-256 over the canonical CSV emission; stable across processes."""
        h = hashlib.sha256()
        for chunk in _csv_rows(self):
            h.update(("\x1f".join(chunk) + "\x1e").encode("utf-8"))
        h.update(self.kind.encode())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# CSV emission / ingestion
# ---------------------------------------------------------------------------


def _format_column(feat: FeatureSchema, col: np.ndarray) -> list[str]:
    if feat.kind == "boolean":
        return ["" if m else ("1" if v >= 0.5 else "0") for v, m in zip(col, np.isnan(col))]
    if feat.kind == "numeric":
        # repr(float) is the shortest round-trip form, so ingest restores bits
        return ["" if m else repr(float(v)) for v, m in zip(col, np.isnan(col))]
    return ["" if v is None else str(v) for v in col]


def _csv_rows(p: Portfolio) -> Iterator[tuple[str, ...]]:
    yield (RECORD_ID_COLUMN, *p.feature_names, OUTCOME_COLUMN)
    formatted = [_format_column(f, p.column(f.name)) for f in p.schema]
    outs = ["" if o == UNLABELED else str(int(o)) for o in p.outcomes]
    yield from zip(p.record_ids, *formatted, outs)


def emit_csv(p: Portfolio, path: str | Path) -> None:
    """Write a portfolio as UTF-8 CSV with a header row.

    Numerics use shortest round-trip formatting, so ``ingest_csv`` restores
    them bit-for-bit; missing values are empty cells.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for row in _csv_rows(p):
            writer.writerow(row)


def _parse_cell(feat: FeatureSchema, cell: str, row: int):
    if cell == "":
        return np.nan if feat.is_numeric_like else None
    if feat.kind == "numeric":
        try:
            return float(cell)
        except ValueError:
            raise IngestError(f"cannot parse {cell!r} as numeric", row=row, column=feat.name) from None
    if feat.kind == "boolean":
        low = cell.strip().lower()
        if low in _TRUE_STRINGS:
            return 1.0
        if low in _FALSE_STRINGS:
            return 0.0
        raise IngestError(f"cannot parse {cell!r} as boolean", row=row, column=feat.name)
    return cell


def ingest_csv(path: str | Path, schema: Sequence[FeatureSchema], kind: str = "synthetic") -> Portfolio:
    """Read a portfolio CSV against a schema.

    The header must contain ``record_id``, may contain ``outcome``, and every
    other column must name a schema feature (order-free). Schema features
    absent from the file are simply not part of the returned portfolio, which
    is how train-only / validation-only availability manifests in the files
    themselves. Parsing is locale-independent (dot decimal separator).
    """
    schema = _check_schema(schema)
    by_name = {f.name: f for f in schema}
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty file: missing header row") from None
        if RECORD_ID_COLUMN not in header:
            raise IngestError("missing required column", column=RECORD_ID_COLUMN)
        seen: set[str] = set()
        for col in header:
            if col in seen:
                raise IngestError("duplicate column in header", column=col)
            seen.add(col)
            if col in (RECORD_ID_COLUMN, OUTCOME_COLUMN):
                continue
            if col not in by_name:
                raise IngestError("column not present in schema", column=col)

        id_pos = header.index(RECORD_ID_COLUMN)
        out_pos = header.index(OUTCOME_COLUMN) if OUTCOME_COLUMN in header else None
        feat_pos = [(i, by_name[c]) for i, c in enumerate(header) if c not in (RECORD_ID_COLUMN, OUTCOME_COLUMN)]
        present = [f for f in schema if f.name in {c for c in header}]

        record_ids: list[str] = []
        ids_seen: set[str] = set()
        outcomes: list[int] = []
        data: dict[str, list] = {f.name: [] for _, f in feat_pos}
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise IngestError(f"expected {len(header)} cells, found {len(row)}", row=row_no)
            rid = row[id_pos]
            if rid in ids_seen:
                raise IngestError(f"duplicate record_id {rid!r}", row=row_no, column=RECORD_ID_COLUMN)
            ids_seen.add(rid)
            record_ids.append(rid)
            if out_pos is None or row[out_pos] == "":
                outcomes.append(UNLABELED)
            elif row[out_pos] in ("0", "1"):
                outcomes.append(int(row[out_pos]))
            else:
                raise IngestError(f"outcome must be 0 or 1, got {row[out_pos]!r}", row=row_no, column=OUTCOME_COLUMN)
            for i, feat in feat_pos:
                data[feat.name].append(_parse_cell(feat, row[i], row_no))

    columns = {
        f.name: np.asarray(data[f.name], dtype=np.float64 if f.is_numeric_like else object)
        if data[f.name]
        else np.empty(0, dtype=np.float64 if f.is_numeric_like else object)
        for f in present
    }
    return Portfolio(present, record_ids, columns, outcomes, kind=kind)


# ---------------------------------------------------------------------------
# Schema files
# ---------------------------------------------------------------------------


def save_schema(schema: Sequence[FeatureSchema], path: str | Path) -> None:
    """Write a schema as JSON (the schema config file consumed by the CLI)."""
    doc = {
        "features": [
            {
                "name": f.name,
                "kind": f.kind,
                "privacy_class": f.privacy_class,
                "bias_class": f.bias_class,
                "availability": f.availability,
            }
            for f in _check_schema(schema)
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_schema(path: str | Path) -> tuple[FeatureSchema, ...]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "features" not in doc:
        raise SchemaError(f"schema file {path} must contain a 'features' list")
    feats = []
    for entry in doc["features"]:
        unknown = set(entry) - {"name", "kind", "privacy_class", "bias_class", "availability"}
        if unknown:
            raise SchemaError(f"unknown schema fields {sorted(unknown)} in {path}")
        feats.append(FeatureSchema(**entry))
    return _check_schema(feats)


# ---------------------------------------------------------------------------
# Split and balance
# ---------------------------------------------------------------------------


def _require_labeled_two_class(p: Portfolio, op: str) -> None:
    if not bool(p.labeled_mask.all()):
        raise ValueError(f"{op} requires a fully labeled portfolio")
    n_pos = int((p.outcomes == 1).sum())
    if n_pos == 0 or n_pos == len(p):
        raise ValueError(f"{op} requires both outcome classes to be present")


def stratified_split(p: Portfolio, test_fraction: float, seed: int) -> tuple[Portfolio, Portfolio]:
    """Split into (train, test) with per-class proportions within 1 record of exact.

    Deterministic for a fixed seed; the two parts are disjoint and their
    union is the input. Record order within each part follows the input.
    """
    if not (0.0 < test_fraction < 1.0):
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    _require_labeled_two_class(p, "stratified_split")
    rng = np.random.default_rng(seed)
    test_idx: list[int] = []
    for label in (0, 1):
        class_idx = np.flatnonzero(p.outcomes == label)
        n_test = int(round(len(class_idx) * test_fraction))
        n_test = min(max(n_test, 0), len(class_idx))
        picked = rng.permutation(len(class_idx))[:n_test]
        test_idx.extend(class_idx[picked].tolist())
    test_set = set(test_idx)
    train_idx = [i for i in range(len(p)) if i not in test_set]
    return p.subset(train_idx), p.subset(sorted(test_set))


def balance_by_undersampling(p: Portfolio, target_positive_fraction: float, seed: int) -> Portfolio:
    """Reach a target positive fraction by dropping majority-class records only.

    All minority-class records are retained; the kept majority subset is a
    seeded random choice. The output fraction lands within one record of the
    target. Raises if the target would require dropping minority records.
    """
    if not (0.0 < target_positive_fraction < 1.0):
        raise ValueError(f"target_positive_fraction must be in (0, 1), got {target_positive_fraction}")
    _require_labeled_two_class(p, "balance_by_undersampling")
    t = target_positive_fraction
    pos_idx = np.flatnonzero(p.outcomes == 1)
    neg_idx = np.flatnonzero(p.outcomes == 0)
    n_pos, n_neg = len(pos_idx), len(neg_idx)
    current = n_pos / (n_pos + n_neg)

    # Raising the positive share means dropping negatives, lowering it means
    # dropping positives; either is legal only when the dropped class is the
    # majority, so the minority class is always fully retained.
    if t >= current:
        if n_neg < n_pos:
            raise ValueError(
                f"target {t} above current fraction {current:.4f} would drop "
                "minority-class (negative) records"
            )
        keep_count = int(round(n_pos * (1.0 - t) / t))
        subsampled, keep_all = neg_idx, pos_idx
    else:
        if n_pos < n_neg:
            raise ValueError(
                f"target {t} below current fraction {current:.4f} would drop "
                "minority-class (positive) records"
            )
        keep_count = int(round(n_neg * t / (1.0 - t)))
        subsampled, keep_all = pos_idx, neg_idx
    keep_count = min(keep_count, len(subsampled))

    rng = np.random.default_rng(seed)
    picked = subsampled[rng.permutation(len(subsampled))[:keep_count]]
    kept = np.sort(np.concatenate([keep_all, picked]))
    return p.subset(kept.tolist())
