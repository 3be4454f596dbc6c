"""loanscreen: an auditable loan-screening pipeline toolkit.

Synthetic portfolio generation, privacy transforms, bias-aware
minimal-optimal feature selection, second-order boosted trees, probability
calibration, prevalence-aware evaluation, and data-drift monitoring.
"""

__version__ = "0.1.0"

from .calibration import (
    Calibrator,
    CalibrationError,
    PredictionSet,
    ReliabilityDiagram,
    expected_calibration_error,
    fit_calibrator,
    freedman_diaconis_bin_count,
    reliability_bins,
    reliability_to_csv,
    shift_prior,
)
from .data_model import (
    FeatureSchema,
    IngestError,
    LoanRecord,
    Portfolio,
    SchemaError,
    balance_by_undersampling,
    emit_csv,
    ingest_csv,
    load_schema,
    save_schema,
    stratified_split,
)
from .feature_select import (
    MrmrSelection,
    MutualInformationEstimate,
    eligible_features,
    mrmr_select,
    mutual_information,
)
from .gbdt import (
    BoostedModel,
    TrainConfig,
    TreeNode,
    load_model,
    logistic_loss_grad_hess,
    predict_margin,
    predict_proba,
    predict_margin_batch,
    predict_proba_batch,
    save_model,
    split_gain,
    train,
)
from .metrics import (
    ConfusionCounts,
    EvaluationReport,
    SkillReport,
    brier_score,
    brier_skill_score,
    choose_threshold_for_sensitivity,
    classify,
    evaluate,
    reference_brier,
)
from .monitor import (
    DriftReport,
    drift_scan,
    ks_statistic,
    population_stability_index,
    psi_from_shares,
)
from .privacy import (
    MaskMap,
    PrivacyError,
    PseudonymizationKey,
    anonymize,
    pseudonymize,
    re_identify,
)
from .synthgen import GeneratorSpec, baseline_scenario, generate
