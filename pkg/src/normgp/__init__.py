"""Normative Gaussian-process age modeling with uncertainty-based anomaly scores.

Train a GP regression from brain features (or any tabular features) to age
on a healthy cohort, then score new subjects by prediction error, posterior
uncertainty, and age-weighted posterior uncertainty.
"""

from __future__ import annotations

from .errors import (
    CohortParseError,
    ConditioningError,
    ModelFormatError,
    ModelIntegrityError,
    NormgpError,
    NumericalError,
    SchemaError,
)
from .gpr import (
    FitConfig,
    PredictionResult,
    TrainedModel,
    WeightedCovariance,
    fit,
    lml_gradient,
    log_marginal_likelihood,
    predict,
    restore,
    stable_cholesky,
    weighted_posterior_cov,
)
from .kernels import (
    FORMS,
    PRODUCT,
    SUM,
    AgeKernelParams,
    KernelParams,
    age_similarity,
    gram_matrix,
    kernel_value,
    prior_variance,
    weighted_kernel_value,
    zero_distance_value,
)
from .metrics import (
    AnomalyScores,
    FitQualityReport,
    cross_validated_quality,
    prediction_error,
    score_cohort,
)
from .preprocess import (
    PcaTransform,
    Standardizer,
    apply_chain,
    apply_standardizer,
    fit_pca,
    fit_standardizer,
    project_pca,
)
from .stats import (
    DEFAULT_LY_GRID,
    METRIC_NAMES,
    FixedEffectsFit,
    LySweepResult,
    RankSumResult,
    RocResult,
    evaluate_scores,
    fit_fixed_effects,
    ly_sweep,
    pearson_r,
    rank_sum_test,
    roc_auc,
)
from .synth import (
    MODES,
    AgingTrajectory,
    SynthConfig,
    generate_cohort,
    sample_trajectory,
)
from .tabular_io import (
    SCORES_HEADER,
    SEX_CODES,
    Cohort,
    CohortSchema,
    FitMetadata,
    ModelArtifact,
    ScoresTable,
    artifact_from_fit,
    load_cohort,
    load_model,
    load_scores,
    save_cohort,
    save_model,
    save_scores,
    sex_to_indicator,
    to_trained_model,
)

__version__ = "0.1.0"

__all__ = [
    "AgeKernelParams",
    "AgingTrajectory",
    "AnomalyScores",
    "Cohort",
    "CohortParseError",
    "CohortSchema",
    "ConditioningError",
    "DEFAULT_LY_GRID",
    "FORMS",
    "FitConfig",
    "FitMetadata",
    "FitQualityReport",
    "FixedEffectsFit",
    "KernelParams",
    "LySweepResult",
    "METRIC_NAMES",
    "MODES",
    "ModelArtifact",
    "ModelFormatError",
    "ModelIntegrityError",
    "NormgpError",
    "NumericalError",
    "PRODUCT",
    "PcaTransform",
    "PredictionResult",
    "RankSumResult",
    "RocResult",
    "SCORES_HEADER",
    "SEX_CODES",
    "SUM",
    "SchemaError",
    "ScoresTable",
    "Standardizer",
    "SynthConfig",
    "TrainedModel",
    "WeightedCovariance",
    "age_similarity",
    "apply_chain",
    "apply_standardizer",
    "artifact_from_fit",
    "cross_validated_quality",
    "evaluate_scores",
    "fit",
    "fit_fixed_effects",
    "fit_pca",
    "fit_standardizer",
    "generate_cohort",
    "gram_matrix",
    "kernel_value",
    "lml_gradient",
    "load_cohort",
    "load_model",
    "load_scores",
    "log_marginal_likelihood",
    "ly_sweep",
    "pearson_r",
    "predict",
    "prediction_error",
    "prior_variance",
    "project_pca",
    "rank_sum_test",
    "restore",
    "roc_auc",
    "sample_trajectory",
    "save_cohort",
    "save_model",
    "save_scores",
    "score_cohort",
    "sex_to_indicator",
    "stable_cholesky",
    "to_trained_model",
    "weighted_kernel_value",
    "weighted_posterior_cov",
    "zero_distance_value",
]
