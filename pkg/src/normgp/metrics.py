"""Per-subject abnormality metrics and cross-validated fit quality.

Three metrics, all oriented so that higher means more abnormal downstream:
the signed prediction error (predicted minus chronological age), the GP
posterior variance, and the age-weighted posterior variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError
from .gpr import FitConfig, TrainedModel, fit, predict, weighted_posterior_cov
from .kernels import AgeKernelParams
from .preprocess import PcaTransform, Standardizer, apply_chain
from .seeding import FOLDS, substream
from .tabular_io import Cohort


@dataclass(frozen=True)
class AnomalyScores:
    """The three abnormality metrics for one scored cohort, row-aligned."""

    epsilon: np.ndarray
    cov_score: np.ndarray
    cov_w_score: np.ndarray
    age_length_scale_used: float
    y_hat: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("epsilon", "cov_score", "cov_w_score", "y_hat"):
            arrays[name] = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            object.__setattr__(self, name, arrays[name])
        n = arrays["epsilon"].shape[0]
        if any(a.shape[0] != n for a in arrays.values()):
            raise ValueError("score vectors must have equal lengths")
        if np.any(arrays["cov_score"] < 0.0) or np.any(arrays["cov_w_score"] < 0.0):
            raise ValueError("uncertainty scores must be nonnegative")


@dataclass(frozen=True)
class FitQualityReport:
    """Cross-validated fit quality: pooled MAE/R2 plus per-fold values."""

    mae: float
    r2: float
    per_fold: tuple[tuple[float, float], ...]
    folds: int

    def __post_init__(self):
        if len(self.per_fold) != self.folds:
            raise ValueError("per_fold length must equal the fold count")


def prediction_error(y_hat, y) -> np.ndarray:
    """Signed prediction error: predicted age minus chronological age."""
    y_hat = np.asarray(y_hat, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y_hat.shape[0] != y.shape[0]:
        raise ValueError(f"length mismatch: {y_hat.shape[0]} predictions vs {y.shape[0]} ages")
    return y_hat - y


def score_cohort(
    model: TrainedModel,
    cohort: Cohort,
    age_params: AgeKernelParams,
    *,
    standardizer: Standardizer | None = None,
    pca: PcaTransform | None = None,
    expected_feature_names: tuple[str, ...] | None = None,
) -> AnomalyScores:
    """Score every cohort row against a trained normative model.

    Applies the stored preprocessing chain, then computes the prediction
    error, the posterior variance, and the age-weighted posterior variance
    (using each subject's chronological age). Row order is preserved.
    """
    if expected_feature_names is not None and tuple(cohort.feature_names) != tuple(
        expected_feature_names
    ):
        raise SchemaError(
            f"cohort feature names {list(cohort.feature_names)} do not match "
            f"the model's {list(expected_feature_names)}"
        )
    transformed = apply_chain(cohort.features, standardizer, pca)
    result = predict(model, transformed)
    weighted = weighted_posterior_cov(model, transformed, cohort.age, age_params)
    return AnomalyScores(
        epsilon=prediction_error(result.y_hat, cohort.age),
        cov_score=result.variance,
        cov_w_score=weighted.variance,
        age_length_scale_used=age_params.age_length_scale,
        y_hat=result.y_hat,
    )


def cross_validated_quality(x, y, folds: int, config: FitConfig | None = None) -> FitQualityReport:
    """K-fold cross-validated MAE and R2 of the age regression.

    Fold assignment is a seeded permutation split (deterministic given
    ``config.seed``). MAE and R2 are computed on the pooled out-of-fold
    predictions; per-fold values are also reported. A fold whose held-out
    ages are constant reports R2 = nan rather than failing.
    """
    cfg = config if config is not None else FitConfig()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("x must be 2-D with one row per y entry")
    m = x.shape[0]
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if folds > m:
        raise ValueError(f"cannot split {m} subjects into {folds} folds")

    order = substream(cfg.seed, FOLDS).permutation(m)
    chunks = np.array_split(order, folds)
    pooled = np.empty(m)
    per_fold: list[tuple[float, float]] = []
    for chunk in chunks:
        mask = np.ones(m, dtype=bool)
        mask[chunk] = False
        fold_model = fit(x[mask], y[mask], cfg)
        predicted = predict(fold_model, x[chunk]).y_hat
        pooled[chunk] = predicted
        errors = predicted - y[chunk]
        fold_mae = float(np.mean(np.abs(errors)))
        ss_tot = float(np.sum((y[chunk] - np.mean(y[chunk])) ** 2))
        if ss_tot > 0.0:
            fold_r2 = 1.0 - float(np.sum(errors**2)) / ss_tot
        else:
            fold_r2 = math.nan
        per_fold.append((fold_mae, fold_r2))

    residuals = pooled - y
    mae = float(np.mean(np.abs(residuals)))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - float(np.sum(residuals**2)) / ss_tot if ss_tot > 0.0 else math.nan
    return FitQualityReport(mae=mae, r2=r2, per_fold=tuple(per_fold), folds=folds)
