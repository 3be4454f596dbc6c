"""Config-driven pipeline stages binding the library into auditable batch runs.

Every stage is a pure function of (config, input files): rerunning with the
same inputs and seed produces byte-identical artifacts. Timestamps live only
in a sidecar run log. Every JSON artifact embeds the tool version and the
hash of the effective config; CSV artifacts carry the same stamp in a
``<name>.meta.json`` sidecar.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .calibration import (
    Calibrator,
    PredictionSet,
    fit_calibrator,
    reliability_to_csv,
    shift_prior,
)
from .data_model import (
    FeatureSchema,
    Portfolio,
    balance_by_undersampling,
    emit_csv,
    ingest_csv,
    load_schema,
    save_schema,
    stratified_split,
)
from .feature_select import MrmrSelection, eligible_features, mrmr_select
from .gbdt import BoostedModel, TrainConfig, predict_proba_batch, train
from .metrics import (
    EvaluationReport,
    choose_threshold_for_sensitivity,
    evaluate,
    report_to_dict,
)
from .monitor import DriftReport, build_baseline, scan_against_baseline
from .privacy import PseudonymizationKey, anonymize, pseudonymize
from .synthgen import (
    DEFAULT_SIGNAL_COEFFICIENTS,
    N_BIAS_FEATURES,
    N_COMMON_NOISE,
    N_SIGNAL_FEATURES,
    N_VALIDATION_ONLY,
    TRAIN_TEST_PREVALENCE,
    TRAIN_TEST_SIZE,
    VALIDATION_PREVALENCE,
    VALIDATION_SIZE,
    scenario,
)

BUNDLE_FORMAT = "loanscreen.bundle"
BUNDLE_FORMAT_VERSION = 1

SECRET_ENV_VAR = "LOANSCREEN_SECRET"


class ConfigError(ValueError):
    """The pipeline config file is invalid."""


class PipelineGuardError(ValueError):
    """A prohibited feature tried to enter training."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathsConfig:
    schema: str = "data/schema.json"
    train_test: str = "data/train_test.csv"
    validation: str = "data/validation.csv"
    train_test_clean: str = "data/train_test_clean.csv"
    validation_clean: str = "data/validation_clean.csv"
    model: str = "model.json"
    selection: str = "reports/selection_report.csv"
    selected_features: str = "reports/selected_features.json"
    evaluation_train_test: str = "reports/evaluation_train_test.json"
    reliability_train_test: str = "reports/reliability_train_test.csv"
    evaluation_validation: str = "reports/evaluation_validation.json"
    reliability_validation: str = "reports/reliability_validation.csv"
    drift_report: str = "reports/drift_report.json"
    reports_dir: str = "reports"
    mask_map: str = "private/mask_map.csv"
    key_file: str | None = None


@dataclass(frozen=True)
class SimulateConfig:
    train_records: int = TRAIN_TEST_SIZE
    train_prevalence: float = TRAIN_TEST_PREVALENCE
    validation_records: int = VALIDATION_SIZE
    validation_prevalence: float = VALIDATION_PREVALENCE
    n_signal_features: int = N_SIGNAL_FEATURES
    n_common_noise: int = N_COMMON_NOISE
    n_bias_features: int = N_BIAS_FEATURES
    n_validation_only: int = N_VALIDATION_ONLY
    signal_coefficients: tuple[float, ...] = DEFAULT_SIGNAL_COEFFICIENTS
    mode: str = "exact"


@dataclass(frozen=True)
class FeaturesConfig:
    k: int = 10
    force_include: tuple[str, ...] = ()


@dataclass(frozen=True)
class CalibrationConfig:
    method: str = "sigmoid"
    holdout_fraction: float = 0.2


@dataclass(frozen=True)
class ThresholdConfig:
    policy: str = "target_sensitivity"  # or "fixed"
    target_sensitivity: float = 0.9
    value: float = 0.5

    def __post_init__(self):
        if self.policy not in ("target_sensitivity", "fixed"):
            raise ConfigError(f"unknown threshold policy {self.policy!r}")
        if not (0.0 < self.target_sensitivity <= 1.0):
            raise ConfigError("target_sensitivity must be in (0, 1]")
        if not (0.0 <= self.value <= 1.0):
            raise ConfigError("fixed threshold value must be in [0, 1]")


@dataclass(frozen=True)
class DriftConfig:
    bins: int = 10
    psi_warning: float = 0.1
    psi_alert: float = 0.25

    def __post_init__(self):
        if self.bins < 2:
            raise ConfigError("drift bins must be >= 2")
        if not (0.0 < self.psi_warning < self.psi_alert):
            raise ConfigError("need 0 < psi_warning < psi_alert")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    out_dir: str = "."
    paths: PathsConfig = field(default_factory=PathsConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    balance_target: float | None = None
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    deployment_prevalence: float | None = None
    drift: DriftConfig = field(default_factory=DriftConfig)
    n_threads: int = 1
    diagram_rule: str = "freedman_diaconis"

    def resolve(self, name: str) -> Path:
        """Resolve a configured path against out_dir (absolute paths win)."""
        raw = getattr(self.paths, name)
        if raw is None:
            raise ConfigError(f"paths.{name} is not set")
        p = Path(raw)
        return p if p.is_absolute() else Path(self.out_dir) / p

    def validate(self) -> None:
        all_paths = {
            name: self.resolve(name)
            for name in (
                "schema",
                "train_test",
                "validation",
                "train_test_clean",
                "validation_clean",
                "model",
                "selection",
                "selected_features",
                "evaluation_train_test",
                "reliability_train_test",
                "evaluation_validation",
                "reliability_validation",
                "drift_report",
                "mask_map",
            )
        }
        seen: dict[Path, str] = {}
        for name, p in all_paths.items():
            if p in seen:
                raise ConfigError(f"paths.{name} and paths.{seen[p]} point to the same file: {p}")
            seen[p] = name
        reports_dir = self.resolve("reports_dir")
        mask_map = all_paths["mask_map"]
        if reports_dir in mask_map.parents or reports_dir == mask_map.parent:
            raise ConfigError(
                "paths.mask_map must live outside the reports directory "
                "(the re-identification table is never co-located with data outputs)"
            )
        if self.deployment_prevalence is not None and not (0.0 < self.deployment_prevalence < 1.0):
            raise ConfigError("deployment_prevalence must be in (0, 1) when set")
        if not (0.0 < self.calibration.holdout_fraction < 1.0):
            raise ConfigError("calibration.holdout_fraction must be in (0, 1)")
        if self.calibration.method not in ("sigmoid", "isotonic"):
            raise ConfigError(f"unknown calibration method {self.calibration.method!r}")
        if self.features.k < 1:
            raise ConfigError("features.k must be >= 1")
        if self.n_threads < 1:
            raise ConfigError("n_threads must be >= 1")


def _dataclass_from(cls, raw: Mapping, where: str):
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = dict(raw)
    for key in ("signal_coefficients", "force_include"):
        if key in kwargs and isinstance(kwargs[key], list):
            kwargs[key] = tuple(kwargs[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from None


def config_from_dict(doc: Mapping) -> PipelineConfig:
    if not isinstance(doc, Mapping):
        raise ConfigError("config root must be a JSON object")
    if "seed" not in doc or not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool):
        raise ConfigError("config requires an integer 'seed' (determinism is not optional)")
    known = {
        "seed",
        "out_dir",
        "paths",
        "simulate",
        "features",
        "train",
        "balance_target",
        "calibration",
        "threshold",
        "deployment_prevalence",
        "drift",
        "n_threads",
        "diagram_rule",
    }
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")

    train_raw = dict(doc.get("train", {}))
    train_raw.setdefault("seed", doc["seed"])
    cfg = PipelineConfig(
        seed=doc["seed"],
        out_dir=doc.get("out_dir", "."),
        paths=_dataclass_from(PathsConfig, doc.get("paths", {}), "paths"),
        simulate=_dataclass_from(SimulateConfig, doc.get("simulate", {}), "simulate"),
        features=_dataclass_from(FeaturesConfig, doc.get("features", {}), "features"),
        train=_dataclass_from(TrainConfig, train_raw, "train"),
        balance_target=doc.get("balance_target"),
        calibration=_dataclass_from(CalibrationConfig, doc.get("calibration", {}), "calibration"),
        threshold=_dataclass_from(ThresholdConfig, doc.get("threshold", {}), "threshold"),
        deployment_prevalence=doc.get("deployment_prevalence"),
        drift=_dataclass_from(DriftConfig, doc.get("drift", {}), "drift"),
        n_threads=doc.get("n_threads", 1),
        diagram_rule=doc.get("diagram_rule", "freedman_diaconis"),
    )
    cfg.validate()
    return cfg


def config_to_dict(cfg: PipelineConfig) -> dict:
    doc = dataclasses.asdict(cfg)
    doc["simulate"]["signal_coefficients"] = list(cfg.simulate.signal_coefficients)
    doc["features"]["force_include"] = list(cfg.features.force_include)
    return doc


def load_config(path: str | Path, seed_override: int | None = None, out_override: str | None = None) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if seed_override is not None:
        doc["seed"] = seed_override
        doc.setdefault("train", {})
        doc["train"]["seed"] = seed_override
    if out_override is not None:
        doc["out_dir"] = out_override
    return config_from_dict(doc)


def default_config(seed: int = 42, out_dir: str = ".") -> PipelineConfig:
    return config_from_dict({"seed": seed, "out_dir": out_dir, "deployment_prevalence": VALIDATION_PREVALENCE})


def config_hash(cfg: PipelineConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Artifact helpers
# ---------------------------------------------------------------------------


def _stamp(cfg: PipelineConfig) -> dict:
    return {"tool_version": __version__, "config_hash": config_hash(cfg)}


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_sidecar(cfg: PipelineConfig, data_path: Path) -> None:
    _write_json(data_path.with_name(data_path.name + ".meta.json"), _stamp(cfg))


def _log_run(cfg: PipelineConfig, command: str) -> None:
    # the run log is the only artifact that carries timestamps
    log_path = Path(cfg.out_dir) / "run_log.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    entry = {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "command": command, **_stamp(cfg)}
    with open(log_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Guard
# ---------------------------------------------------------------------------


def guard_selected_features(schema: Sequence[FeatureSchema], names: Sequence[str]) -> None:
    """Refuse any feature that must never reach training."""
    by_name = {f.name: f for f in schema}
    offending: list[str] = []
    for name in names:
        feat = by_name.get(name)
        if feat is None:
            offending.append(f"{name} (unknown feature)")
        elif feat.privacy_class == "direct_identifier":
            offending.append(f"{name} (direct identifier)")
        elif feat.bias_class != "none":
            offending.append(f"{name} (bias class: {feat.bias_class})")
        elif feat.availability != "common":
            offending.append(f"{name} (availability: {feat.availability})")
    if offending:
        raise PipelineGuardError(
            "refusing to use prohibited features: " + "; ".join(offending)
        )


# ---------------------------------------------------------------------------
# In-memory orchestration (shared by the CLI stages and the test harness)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScreeningArtifacts:
    """Everything cmd_train persists: model, calibration, threshold, baseline."""

    selection: MrmrSelection
    model: BoostedModel
    calibrator: Calibrator
    threshold: float  # on the calibrated, training-prior probability scale
    train_prevalence: float
    drift_baseline: dict
    drift_bins: int
    phase1_report: EvaluationReport | None


def fit_screening_model(
    train_test: Portfolio,
    master_schema: Sequence[FeatureSchema],
    *,
    k: int = 10,
    train_cfg: TrainConfig | None = None,
    calibration_method: str = "sigmoid",
    holdout_fraction: float = 0.2,
    threshold_policy: ThresholdConfig | None = None,
    seed: int = 0,
    n_threads: int = 1,
    balance_target: float | None = None,
    force_include: Sequence[str] = (),
    diagram_rule: str | int = "freedman_diaconis",
    drift_bins: int = 10,
    selection: MrmrSelection | None = None,
) -> ScreeningArtifacts:
    """Select features, train, calibrate and pick the operating threshold.

    The calibration split is held out from training; the threshold is chosen
    on its calibrated scores. Pass an existing ``selection`` to skip the
    mRMR stage (as the staged CLI does).
    """
    train_cfg = train_cfg or TrainConfig(seed=seed)
    threshold_policy = threshold_policy or ThresholdConfig()

    if balance_target is not None:
        train_test = balance_by_undersampling(train_test, balance_target, seed)

    if selection is None:
        candidates = [n for n in eligible_features(master_schema) if n in set(train_test.feature_names)]
        if force_include:
            guard_selected_features(master_schema, force_include)
            candidates += [n for n in force_include if n not in candidates]
        selection = mrmr_select(train_test, candidates, k)
    guard_selected_features(master_schema, selection.selected)

    fit_part, calib_part = stratified_split(train_test, holdout_fraction, seed)
    model = train(fit_part, list(selection.selected), train_cfg, n_threads=n_threads)

    raw_calib = predict_proba_batch(model, calib_part)
    calib_scores = PredictionSet(raw_calib, calib_part.outcomes)
    calibrator = fit_calibrator(calib_scores, calibration_method)
    calibrated = PredictionSet(calibrator.apply(raw_calib), calib_part.outcomes)

    if threshold_policy.policy == "fixed":
        threshold = threshold_policy.value
    else:
        threshold = choose_threshold_for_sensitivity(calibrated, threshold_policy.target_sensitivity)

    phase1 = evaluate(calibrated, threshold, diagram_rule)
    baseline = build_baseline(train_test, selection.selected, drift_bins)
    return ScreeningArtifacts(
        selection=selection,
        model=model,
        calibrator=calibrator,
        threshold=threshold,
        train_prevalence=calib_part.prevalence,
        drift_baseline=baseline,
        drift_bins=drift_bins,
        phase1_report=phase1,
    )


def score_portfolio(
    artifacts: ScreeningArtifacts, p: Portfolio, deployment_prevalence: float | None = None
) -> tuple[np.ndarray, float]:
    """Calibrated probabilities plus the matching decision threshold.

    When ``deployment_prevalence`` is given, probabilities and threshold are
    prior-shifted together from the training base rate, so the accept/flag
    decision set is unchanged while the probabilities become meaningful at
    the deployment base rate.
    """
    raw = predict_proba_batch(artifacts.model, p)
    probs = artifacts.calibrator.apply(raw)
    threshold = artifacts.threshold
    if deployment_prevalence is not None:
        probs = shift_prior(probs, artifacts.train_prevalence, deployment_prevalence)
        threshold = float(shift_prior(threshold, artifacts.train_prevalence, deployment_prevalence))
    return probs, threshold


def evaluate_portfolio(
    artifacts: ScreeningArtifacts,
    p: Portfolio,
    deployment_prevalence: float | None = None,
    diagram_rule: str | int = "freedman_diaconis",
) -> EvaluationReport:
    probs, threshold = score_portfolio(artifacts, p, deployment_prevalence)
    scores = PredictionSet(probs, p.outcomes)
    return evaluate(scores, threshold, diagram_rule)


# ---------------------------------------------------------------------------
# Bundle persistence
# ---------------------------------------------------------------------------


def save_bundle(artifacts: ScreeningArtifacts, cfg: PipelineConfig, path: Path) -> None:
    doc = {
        "format": BUNDLE_FORMAT,
        "format_version": BUNDLE_FORMAT_VERSION,
        **_stamp(cfg),
        "model": artifacts.model.to_dict(),
        "calibrator": artifacts.calibrator.to_dict(),
        "threshold": artifacts.threshold,
        "train_prevalence": artifacts.train_prevalence,
        "selected_features": list(artifacts.selection.selected),
        "selection_steps": artifacts.selection.report_rows(),
        "drift_baseline": artifacts.drift_baseline,
        "drift_bins": artifacts.drift_bins,
    }
    _write_json(path, doc)


@dataclass(frozen=True)
class LoadedBundle:
    model: BoostedModel
    calibrator: Calibrator
    threshold: float
    train_prevalence: float
    selected_features: tuple[str, ...]
    drift_baseline: dict
    drift_bins: int

    def as_artifacts(self) -> ScreeningArtifacts:
        steps = ()
        selection = MrmrSelection(selected=self.selected_features, steps=steps, k=len(self.selected_features))
        return ScreeningArtifacts(
            selection=selection,
            model=self.model,
            calibrator=self.calibrator,
            threshold=self.threshold,
            train_prevalence=self.train_prevalence,
            drift_baseline=self.drift_baseline,
            drift_bins=self.drift_bins,
            phase1_report=None,  # not persisted in the bundle
        )


def load_bundle(path: Path) -> LoadedBundle:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"not a model bundle: {path}")
    return LoadedBundle(
        model=BoostedModel.from_dict(doc["model"]),
        calibrator=Calibrator.from_dict(doc["calibrator"]),
        threshold=float(doc["threshold"]),
        train_prevalence=float(doc["train_prevalence"]),
        selected_features=tuple(doc["selected_features"]),
        drift_baseline=doc["drift_baseline"],
        drift_bins=int(doc["drift_bins"]),
    )


# ---------------------------------------------------------------------------
# CLI stage implementations
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: PipelineConfig) -> dict:
    """Generate the synthetic portfolio pair and write schema + CSVs."""
    sim = cfg.simulate
    train_p, valid_p = scenario(
        seed=cfg.seed,
        train_size=sim.train_records,
        train_prevalence=sim.train_prevalence,
        validation_size=sim.validation_records,
        validation_prevalence=sim.validation_prevalence,
        n_signal=sim.n_signal_features,
        n_common_noise=sim.n_common_noise,
        n_bias=sim.n_bias_features,
        n_validation_only=sim.n_validation_only,
        signal_coefficients=sim.signal_coefficients,
        mode=sim.mode,
    )
    schema_path = cfg.resolve("schema")
    schema_path.parent.mkdir(parents=True, exist_ok=True)
    save_schema(valid_p.schema, schema_path)  # validation side carries the full union
    for name, portfolio in (("train_test", train_p), ("validation", valid_p)):
        path = cfg.resolve(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        emit_csv(portfolio, path)
        _write_sidecar(cfg, path)
    _log_run(cfg, "simulate")
    return {"train_test": str(cfg.resolve("train_test")), "validation": str(cfg.resolve("validation"))}


def _load_portfolios(cfg: PipelineConfig, clean: bool) -> tuple[Portfolio, Portfolio, tuple[FeatureSchema, ...]]:
    schema = load_schema(cfg.resolve("schema"))
    tt_name = "train_test_clean" if clean else "train_test"
    va_name = "validation_clean" if clean else "validation"
    train_p = ingest_csv(cfg.resolve(tt_name), schema, kind="train_test")
    valid_p = ingest_csv(cfg.resolve(va_name), schema, kind="validation")
    return train_p, valid_p, schema


def cmd_anonymize(cfg: PipelineConfig) -> dict:
    """Drop direct identifiers and pseudonymize quasi-identifiers.

    The mask map goes to its own path (never under the reports directory);
    the masking secret comes from the environment or a key file.
    """
    train_p, valid_p, schema = _load_portfolios(cfg, clean=False)
    has_quasi = any(f.privacy_class == "quasi_identifier" for f in schema)

    mask_map = None
    outputs = {}
    for name, portfolio, out_name in (
        ("train_test", train_p, "train_test_clean"),
        ("validation", valid_p, "validation_clean"),
    ):
        cleaned = anonymize(portfolio)
        if has_quasi and any(f.privacy_class == "quasi_identifier" for f in cleaned.schema):
            key = PseudonymizationKey.from_env_or_file(
                SECRET_ENV_VAR,
                cfg.resolve("key_file") if cfg.paths.key_file else None,
                noise_scale=_noise_scales_for(cleaned),
            )
            cleaned, part_map = pseudonymize(cleaned, key, cfg.seed)
            if mask_map is None:
                mask_map = part_map
            else:
                for feature in part_map.features:
                    for token in part_map.tokens(feature):
                        mask_map.add(feature, part_map.original_for(feature, token), token)
        out_path = cfg.resolve(out_name)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        emit_csv(cleaned, out_path)
        _write_sidecar(cfg, out_path)
        outputs[out_name] = str(out_path)

    if mask_map is not None:
        map_path = cfg.resolve("mask_map")
        map_path.parent.mkdir(parents=True, exist_ok=True)
        mask_map.save(map_path)
        outputs["mask_map"] = str(map_path)

    # the anonymized schema drops identifier columns entirely
    cleaned_schema = tuple(f for f in schema if f.privacy_class != "direct_identifier")
    save_schema(cleaned_schema, cfg.resolve("schema"))
    _log_run(cfg, "anonymize")
    return outputs


def _noise_scales_for(p: Portfolio) -> dict[str, float]:
    """Default noise scale: one tenth of each numeric quasi-identifier's std."""
    scales = {}
    for f in p.schema:
        if f.privacy_class == "quasi_identifier" and f.kind == "numeric":
            col = np.asarray(p.column(f.name), dtype=np.float64)
            std = float(np.nanstd(col))
            scales[f.name] = std / 10.0 if std > 0 else 1.0
    return scales


def cmd_select(cfg: PipelineConfig) -> MrmrSelection:
    """Produce the selection report from the cleaned training data."""
    schema = load_schema(cfg.resolve("schema"))
    train_p = ingest_csv(cfg.resolve("train_test_clean"), schema, kind="train_test")
    if cfg.balance_target is not None:
        train_p = balance_by_undersampling(train_p, cfg.balance_target, cfg.seed)

    candidates = [n for n in eligible_features(schema) if n in set(train_p.feature_names)]
    if cfg.features.force_include:
        guard_selected_features(schema, cfg.features.force_include)
        candidates += [n for n in cfg.features.force_include if n not in candidates]
    selection = mrmr_select(train_p, candidates, cfg.features.k)

    report_path = cfg.resolve("selection")
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("step,feature,relevance,redundancy,score\n")
        for row in selection.report_rows():
            fh.write(
                f"{row['step']},{row['feature']},{row['relevance']!r},{row['redundancy']!r},{row['score']!r}\n"
            )
    _write_sidecar(cfg, report_path)
    _write_json(
        cfg.resolve("selected_features"),
        {**_stamp(cfg), "k": selection.k, "selected": list(selection.selected), "steps": selection.report_rows()},
    )
    _log_run(cfg, "select")
    return selection


def _load_selection(cfg: PipelineConfig) -> MrmrSelection:
    with open(cfg.resolve("selected_features"), "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    from .feature_select import SelectionStep

    steps = tuple(
        SelectionStep(
            feature=s["feature"], relevance=s["relevance"], redundancy=s["redundancy"], score=s["score"]
        )
        for s in doc["steps"]
    )
    return MrmrSelection(selected=tuple(doc["selected"]), steps=steps, k=doc["k"])


def cmd_train(cfg: PipelineConfig) -> ScreeningArtifacts:
    """Train, calibrate, choose the threshold, and persist the model bundle."""
    schema = load_schema(cfg.resolve("schema"))
    train_p = ingest_csv(cfg.resolve("train_test_clean"), schema, kind="train_test")
    selection = _load_selection(cfg)
    artifacts = fit_screening_model(
        train_p,
        schema,
        k=cfg.features.k,
        train_cfg=cfg.train,
        calibration_method=cfg.calibration.method,
        holdout_fraction=cfg.calibration.holdout_fraction,
        threshold_policy=cfg.threshold,
        seed=cfg.seed,
        n_threads=cfg.n_threads,
        balance_target=cfg.balance_target,
        diagram_rule=cfg.diagram_rule,
        drift_bins=cfg.drift.bins,
        selection=selection,
    )
    save_bundle(artifacts, cfg, cfg.resolve("model"))

    eval_path = cfg.resolve("evaluation_train_test")
    _write_json(eval_path, {**_stamp(cfg), "dataset": "train_test_calibration_split", **report_to_dict(artifacts.phase1_report)})
    rel_path = cfg.resolve("reliability_train_test")
    rel_path.parent.mkdir(parents=True, exist_ok=True)
    reliability_to_csv(artifacts.phase1_report.diagram, rel_path)
    _write_sidecar(cfg, rel_path)
    _log_run(cfg, "train")
    return artifacts


def cmd_evaluate(cfg: PipelineConfig) -> EvaluationReport:
    """Score the validation portfolio with the persisted bundle."""
    schema = load_schema(cfg.resolve("schema"))
    valid_p = ingest_csv(cfg.resolve("validation_clean"), schema, kind="validation")
    bundle = load_bundle(cfg.resolve("model"))
    report = evaluate_portfolio(
        bundle.as_artifacts(), valid_p, cfg.deployment_prevalence, cfg.diagram_rule
    )
    _write_json(
        cfg.resolve("evaluation_validation"),
        {
            **_stamp(cfg),
            "dataset": "validation",
            "deployment_prevalence": cfg.deployment_prevalence,
            **report_to_dict(report),
        },
    )
    rel_path = cfg.resolve("reliability_validation")
    rel_path.parent.mkdir(parents=True, exist_ok=True)
    reliability_to_csv(report.diagram, rel_path)
    _write_sidecar(cfg, rel_path)
    _log_run(cfg, "evaluate")
    return report


def cmd_drift(cfg: PipelineConfig) -> DriftReport:
    """Scan the live (validation) portfolio against the frozen training baseline."""
    schema = load_schema(cfg.resolve("schema"))
    live_p = ingest_csv(cfg.resolve("validation_clean"), schema, kind="validation")
    bundle = load_bundle(cfg.resolve("model"))
    report = scan_against_baseline(
        bundle.drift_baseline,
        live_p,
        psi_warning=cfg.drift.psi_warning,
        psi_alert=cfg.drift.psi_alert,
        reference_window="train_test",
        current_window="validation",
    )
    report.save(cfg.resolve("drift_report"), extra=_stamp(cfg))
    _log_run(cfg, "drift")
    return report


def cmd_pipeline(cfg: PipelineConfig) -> DriftReport:
    """Run every stage in order; refuses to train on prohibited features."""
    cmd_simulate(cfg)
    cmd_anonymize(cfg)
    selection = cmd_select(cfg)
    schema = load_schema(cfg.resolve("schema"))
    guard_selected_features(schema, selection.selected)
    cmd_train(cfg)
    cmd_evaluate(cfg)
    report = cmd_drift(cfg)
    _log_run(cfg, "pipeline")
    return report
