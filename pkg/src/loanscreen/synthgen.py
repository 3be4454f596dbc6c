"""Synthetic loan portfolios with controllable size, prevalence, signal and drift.

The latent model is documented and deliberately simple. Signal features are
unit-variance Gaussians whose class-conditional means differ by the signal
coefficients, so the exact Bayes posterior for the bad-loan outcome is
logistic in the features. Noise features are independent standard normals.
Bias features are noisy proxies of the outcome through a shared latent
protected attribute: including them inflates apparent performance, which is
precisely why the schema tags them as prohibited.

Two label modes:

* ``exact``   -- fix the positive count at round(prevalence * n), then draw
                 features conditionally on the label (default; reproduces
                 portfolio compositions with exact integer counts).
* ``bernoulli`` -- draw features first and the label from the logistic
                 posterior; the intercept is bisected so the mean posterior
                 hits the target prevalence.

Determinism: every portfolio uses a PCG64 stream seeded with
``(seed, portfolio_index)``; record blocks could be range-split from the
same stream without changing the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data_model import FeatureSchema, Portfolio
from .gbdt import sigmoid

DEFAULT_SIGNAL_COEFFICIENTS = (1.6, 1.4, 1.2, 1.1, 1.0, 0.9, 0.8, 0.7, 0.6, 0.5)
DEFAULT_BIAS_STRENGTH = 3.0
_BIAS_PROXY_NOISE = 0.5
_BIAS_CLASSES = ("credit_history", "gender", "race_ethnicity")

# Reference composition: balanced historical extract vs highly imbalanced
# active portfolio, with 10 signal features among 30 shared ones and 84 in
# the validation data.
TRAIN_TEST_SIZE = 7289
TRAIN_TEST_POSITIVES = 4224
TRAIN_TEST_PREVALENCE = 0.5795
VALIDATION_SIZE = 63763
VALIDATION_POSITIVES = 1613
VALIDATION_PREVALENCE = 0.0253
N_SIGNAL_FEATURES = 10
N_COMMON_NOISE = 16
N_BIAS_FEATURES = 4
N_VALIDATION_ONLY = 54


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of one synthetic portfolio."""

    n_records: int
    prevalence: float
    n_signal_features: int = 10
    n_noise_features: int = 16
    n_bias_features: int = 0
    signal_coefficients: tuple[float, ...] = DEFAULT_SIGNAL_COEFFICIENTS
    intercept: float | None = None
    bias_strength: float = DEFAULT_BIAS_STRENGTH
    drift_shift: Mapping[str, float] = field(default_factory=dict)
    mode: str = "exact"
    seed: int = 0

    def __post_init__(self):
        if self.n_records < 1:
            raise ValueError("n_records must be >= 1")
        if not (0.0 < self.prevalence < 1.0):
            raise ValueError(f"prevalence must be in (0, 1), got {self.prevalence}")
        if min(self.n_signal_features, self.n_noise_features, self.n_bias_features) < 0:
            raise ValueError("feature counts must be >= 0")
        if len(self.signal_coefficients) != self.n_signal_features:
            raise ValueError(
                f"expected {self.n_signal_features} signal coefficients, got {len(self.signal_coefficients)}"
            )
        if self.mode not in ("exact", "bernoulli"):
            raise ValueError(f"mode must be 'exact' or 'bernoulli', got {self.mode!r}")


def _feature_names(spec: GeneratorSpec) -> tuple[list[str], list[str], list[str]]:
    signal = [f"signal_{i + 1:02d}" for i in range(spec.n_signal_features)]
    noise = [f"noise_{i + 1:02d}" for i in range(spec.n_noise_features)]
    bias = [f"bias_proxy_{i + 1:02d}" for i in range(spec.n_bias_features)]
    return signal, noise, bias


def _schema_for(spec: GeneratorSpec) -> tuple[FeatureSchema, ...]:
    signal, noise, bias = _feature_names(spec)
    feats = [FeatureSchema(n, "numeric", "free", "none", "common") for n in signal + noise]
    feats += [
        FeatureSchema(n, "numeric", "free", _BIAS_CLASSES[i % len(_BIAS_CLASSES)], "common")
        for i, n in enumerate(bias)
    ]
    return tuple(feats)


def _solve_intercept(u: np.ndarray, target: float) -> float:
    """Bisect b so that mean(sigmoid(b + u)) hits the target prevalence."""
    lo, hi = -60.0, 60.0

    def mean_p(b):
        return float(np.mean(sigmoid(b + u)))

    if mean_p(lo) > target or mean_p(hi) < target:
        raise ValueError(
            "unachievable prevalence: signal coefficients saturate the logistic posterior"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_p(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _generate_arrays(spec: GeneratorSpec, rng: np.random.Generator):
    n = spec.n_records
    c = np.asarray(spec.signal_coefficients, dtype=np.float64)

    if spec.mode == "exact":
        n_pos = int(round(spec.prevalence * n))
        n_pos = min(max(n_pos, 1), n - 1)
        outcome = np.zeros(n, dtype=np.int64)
        outcome[rng.permutation(n)[:n_pos]] = 1
        signal = rng.standard_normal((n, spec.n_signal_features))
        signal += outcome[:, None] * c[None, :]
    else:
        signal = rng.standard_normal((n, spec.n_signal_features))
        u = signal @ c
        b = spec.intercept if spec.intercept is not None else _solve_intercept(u, spec.prevalence)
        outcome = (rng.random(n) < sigmoid(b + u)).astype(np.int64)

    noise = rng.standard_normal((n, spec.n_noise_features))
    if spec.n_bias_features:
        latent = spec.bias_strength * outcome + rng.standard_normal(n)
        bias = latent[:, None] + _BIAS_PROXY_NOISE * rng.standard_normal((n, spec.n_bias_features))
    else:
        bias = np.empty((n, 0))
    return outcome, signal, noise, bias


def generate(spec: GeneratorSpec, id_prefix: str = "rec", kind: str = "synthetic") -> Portfolio:
    """Generate one labeled portfolio from the latent-factor model."""
    rng = np.random.default_rng((spec.seed % (2**64), 0))
    outcome, signal, noise, bias = _generate_arrays(spec, rng)
    signal_names, noise_names, bias_names = _feature_names(spec)

    columns: dict[str, np.ndarray] = {}
    for j, name in enumerate(signal_names):
        columns[name] = signal[:, j]
    for j, name in enumerate(noise_names):
        columns[name] = noise[:, j]
    for j, name in enumerate(bias_names):
        columns[name] = bias[:, j]
    for name, offset in spec.drift_shift.items():
        if name not in columns:
            raise ValueError(f"drift_shift names unknown feature {name!r}")
        columns[name] = columns[name] + float(offset)

    n = spec.n_records
    width = max(len(str(n)), 6)
    record_ids = [f"{id_prefix}_{i + 1:0{width}d}" for i in range(n)]
    return Portfolio(_schema_for(spec), record_ids, columns, outcome, kind=kind)


def scenario(
    seed: int = 42,
    train_size: int = TRAIN_TEST_SIZE,
    train_prevalence: float = TRAIN_TEST_PREVALENCE,
    validation_size: int = VALIDATION_SIZE,
    validation_prevalence: float = VALIDATION_PREVALENCE,
    n_signal: int = N_SIGNAL_FEATURES,
    n_common_noise: int = N_COMMON_NOISE,
    n_bias: int = N_BIAS_FEATURES,
    n_validation_only: int = N_VALIDATION_ONLY,
    signal_coefficients: tuple[float, ...] = DEFAULT_SIGNAL_COEFFICIENTS,
    mode: str = "exact",
) -> tuple[Portfolio, Portfolio]:
    """A matched (train_test, validation) portfolio pair with disjoint records.

    Both portfolios share the class-conditional feature process; only the
    base rate differs. The validation side additionally carries
    ``n_validation_only`` noise features tagged validation_only.
    """
    common_spec = dict(
        n_signal_features=n_signal,
        n_noise_features=n_common_noise,
        n_bias_features=n_bias,
        signal_coefficients=tuple(signal_coefficients),
        mode=mode,
    )
    train_spec = GeneratorSpec(n_records=train_size, prevalence=train_prevalence, seed=seed, **common_spec)
    valid_spec = GeneratorSpec(n_records=validation_size, prevalence=validation_prevalence, seed=seed, **common_spec)

    rng_train = np.random.default_rng((seed % (2**64), 1))
    rng_valid = np.random.default_rng((seed % (2**64), 2))

    train_outcome, train_signal, train_noise, train_bias = _generate_arrays(train_spec, rng_train)
    valid_outcome, valid_signal, valid_noise, valid_bias = _generate_arrays(valid_spec, rng_valid)
    valid_extra = rng_valid.standard_normal((validation_size, n_validation_only))

    signal_names, noise_names, bias_names = _feature_names(train_spec)
    extra_names = [f"extra_noise_{i + 1:02d}" for i in range(n_validation_only)]

    common_schema = list(_schema_for(train_spec))
    extra_schema = [FeatureSchema(n, "numeric", "free", "none", "validation_only") for n in extra_names]

    def columns_from(signal, noise, bias, extra=None):
        cols = {name: signal[:, j] for j, name in enumerate(signal_names)}
        cols.update({name: noise[:, j] for j, name in enumerate(noise_names)})
        cols.update({name: bias[:, j] for j, name in enumerate(bias_names)})
        if extra is not None:
            cols.update({name: extra[:, j] for j, name in enumerate(extra_names)})
        return cols

    width = max(len(str(train_size)), len(str(validation_size)), 6)
    train = Portfolio(
        common_schema,
        [f"tt_{i + 1:0{width}d}" for i in range(train_size)],
        columns_from(train_signal, train_noise, train_bias),
        train_outcome,
        kind="train_test",
    )
    validation = Portfolio(
        common_schema + extra_schema,
        [f"val_{i + 1:0{width}d}" for i in range(validation_size)],
        columns_from(valid_signal, valid_noise, valid_bias, valid_extra),
        valid_outcome,
        kind="validation",
    )
    return train, validation


def baseline_scenario(seed: int = 42, mode: str = "exact") -> tuple[Portfolio, Portfolio]:
    """The reference pair: a balanced 7,289-loan historical extract (57.95%
    bad) and a highly imbalanced 63,763-loan active portfolio (2.53% bad),
    with 10 signal features among 30 shared ones and 84 validation-side
    features including bias-tagged proxies the selection stage must refuse.
    """
    return scenario(seed=seed, mode=mode)


def bayes_posterior(p: Portfolio, spec_or_coefficients, prevalence: float) -> np.ndarray:
    """Exact posterior bad-loan probability under the exact-mode latent model.

    With class-conditional unit Gaussians shifted by the coefficients, the
    posterior log-odds are logit(prevalence) - ||c||^2/2 + c . x. Useful as
    an analytic oracle for calibration checks.
    """
    if isinstance(spec_or_coefficients, GeneratorSpec):
        c = np.asarray(spec_or_coefficients.signal_coefficients, dtype=np.float64)
        names = _feature_names(spec_or_coefficients)[0]
    else:
        c = np.asarray(spec_or_coefficients, dtype=np.float64)
        names = [f"signal_{i + 1:02d}" for i in range(len(c))]
    x = np.column_stack([p.column(n) for n in names])
    margin = math.log(prevalence / (1.0 - prevalence)) - 0.5 * float(c @ c) + x @ c
    return sigmoid(margin)
