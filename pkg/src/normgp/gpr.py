"""Exact Gaussian process age regression.

Training maximizes the log marginal likelihood with analytic gradients,
using multi-start L-BFGS-B in log-parameter space. Inference goes through
a cached Cholesky factorization of the training Gram matrix — never an
explicit inverse. The age-weighted posterior covariance rebuilds all three
Gram blocks with the weighted kernel, reusing the fitted hyperparameters.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import ConditioningError, NumericalError
from .kernels import (
    FORMS,
    SUM,
    AgeKernelParams,
    KernelParams,
    gram_matrix,
    zero_distance_value,
)
from .seeding import RESTARTS, substream

_LOG_TWO_PI = math.log(2.0 * math.pi)
# Objective value reported to the optimizer when the Gram matrix cannot be
# factorized at the visited hyperparameters: a finite plateau it backs off from.
_FAILURE_OBJECTIVE = 1e25
# Box for log-parameters during optimization; exp(+-50) stays comfortably
# inside double range so no intermediate overflows.
_LOG_PARAM_BOUND = 50.0
_NEGATIVE_VARIANCE_TOLERANCE = -1e-10


def stable_cholesky(
    matrix,
    *,
    initial_jitter_factor: float = 1e-10,
    max_jitter_factor: float = 1e-4,
) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, escalating diagonal jitter on failure.

    The matrix is first factorized unmodified. On failure, jitter starting
    at ``initial_jitter_factor * mean(diag)`` is added and escalated tenfold
    per attempt up to ``max_jitter_factor * mean(diag)``.

    Returns
    -------
    (chol, jitter) : the factor and the jitter that succeeded (0.0 when the
    unmodified matrix was positive definite).

    Raises
    ------
    ConditioningError
        When every attempt fails; carries the attempted jitter ladder.
    """
    k = np.asarray(matrix, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError("matrix must be square")
    attempted: list[float] = []
    if not np.all(np.isfinite(k)):
        raise ConditioningError("matrix has non-finite entries", attempted)
    scale = float(np.mean(np.diagonal(k)))
    if not scale > 0.0:
        scale = 1.0
    jitter = 0.0
    while True:
        try:
            shifted = k if jitter == 0.0 else k + jitter * np.eye(k.shape[0])
            return cholesky(shifted, lower=True, check_finite=False), jitter
        except np.linalg.LinAlgError:
            attempted.append(jitter)
            jitter = initial_jitter_factor * scale if jitter == 0.0 else 10.0 * jitter
            if jitter > max_jitter_factor * scale * (1.0 + 1e-9):
                raise ConditioningError(
                    f"Cholesky failed for a {k.shape[0]}x{k.shape[0]} matrix even "
                    f"after escalating jitter to {attempted[-1]:.3e}",
                    attempted,
                ) from None


@dataclass(frozen=True)
class FitConfig:
    """Settings for marginal-likelihood training.

    ``fixed_params`` skips optimization entirely and factorizes at the
    given hyperparameters. ``center_ages`` subtracts the training mean from
    the targets before fitting (the offset is added back at prediction).
    """

    form: str = SUM
    restarts: int = 5
    seed: int = 0
    length_scale_init_range: tuple[float, float] = (0.1, 10.0)
    noise_variance_init_factor: float = 0.1
    max_iterations: int = 200
    tolerance: float = 1e-8
    initial_jitter_factor: float = 1e-10
    max_jitter_factor: float = 1e-4
    center_ages: bool = False
    fixed_params: KernelParams | None = None

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown kernel form {self.form!r}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        lo, hi = self.length_scale_init_range
        if not (0.0 < lo <= hi):
            raise ValueError("length_scale_init_range must be positive and ordered")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0.0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class TrainedModel:
    """A fitted GP: training data, hyperparameters, cached factorization.

    ``alpha`` solves ``(K + jitter*I) alpha = y - y_offset``; ``chol`` is the
    lower Cholesky factor of the same matrix. ``y`` keeps the chronological
    training ages (needed by the age-weighted kernel even when the
    regression ran on centered targets).
    """

    x: np.ndarray
    y: np.ndarray
    params: KernelParams
    form: str
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    log_marginal_likelihood: float
    y_offset: float = 0.0
    restart_log_marginals: tuple[float, ...] = ()
    chosen_restart: int = 0
    initial_jitter_factor: float = 1e-10
    max_jitter_factor: float = 1e-4

    def __post_init__(self):
        for name in ("x", "y", "chol", "alpha"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n_training(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class PredictionResult:
    """Predicted ages with posterior variance (and optional full covariance)."""

    y_hat: np.ndarray
    variance: np.ndarray
    full_cov: np.ndarray | None = None


@dataclass(frozen=True)
class WeightedCovariance:
    """Posterior covariance under the age-weighted kernel."""

    variance: np.ndarray
    full_cov: np.ndarray
    jitter: float


def _validated_features(x, n_features: int | None = None, name: str = "X") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if n_features is not None and arr.shape[1] != n_features:
        raise ValueError(f"{name} has {arr.shape[1]} features, expected {n_features}")
    return arr


def _validated_targets(y, n_rows: int) -> np.ndarray:
    arr = np.asarray(y, dtype=float).reshape(-1)
    if arr.shape[0] != n_rows:
        raise ValueError(f"y has length {arr.shape[0]}, expected {n_rows}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("y contains non-finite values")
    return arr


def _log_params(params: KernelParams) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.concatenate([params.length_scales, [params.noise_variance]]))


def _params_from_log(theta: np.ndarray, n_features: int) -> KernelParams:
    return KernelParams(
        length_scales=np.exp(theta[:n_features]),
        noise_variance=float(np.exp(theta[n_features])),
    )


def _lml_value(chol: np.ndarray, alpha: np.ndarray, y: np.ndarray) -> float:
    half_logdet = float(np.sum(np.log(np.diagonal(chol))))
    return float(-0.5 * (y @ alpha) - half_logdet - 0.5 * y.shape[0] * _LOG_TWO_PI)


def _lml_and_gradient(
    theta: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    form: str,
    initial_jitter_factor: float,
    max_jitter_factor: float,
) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and gradient over (log l_1..log l_K, log noise).

    Raises ConditioningError when the Gram matrix cannot be factorized.
    """
    m, n_features = x.shape
    params = _params_from_log(theta, n_features)
    lengths = params.length_scales
    squared = [np.square(x[:, dim, None] - x[None, :, dim]) for dim in range(n_features)]
    shared = None
    if form == SUM:
        kmat = np.zeros((m, m))
        for dim in range(n_features):
            kmat += np.exp(squared[dim] / (-2.0 * lengths[dim] ** 2))
    else:
        q = np.zeros((m, m))
        for dim in range(n_features):
            q += squared[dim] / (2.0 * lengths[dim] ** 2)
        shared = np.exp(-q)
        kmat = shared.copy()
    kmat[np.diag_indices(m)] += params.noise_variance

    chol, _ = stable_cholesky(
        kmat,
        initial_jitter_factor=initial_jitter_factor,
        max_jitter_factor=max_jitter_factor,
    )
    alpha = cho_solve((chol, True), y, check_finite=False)
    value = _lml_value(chol, alpha, y)

    k_inv = cho_solve((chol, True), np.eye(m), check_finite=False)
    a_mat = np.outer(alpha, alpha) - k_inv
    grad = np.empty(n_features + 1)
    for dim in range(n_features):
        if form == SUM:
            e_dim = np.exp(squared[dim] / (-2.0 * lengths[dim] ** 2))
        else:
            e_dim = shared
        grad[dim] = 0.5 * float(np.sum(a_mat * (e_dim * squared[dim]))) / lengths[dim] ** 2
    grad[n_features] = (
        0.5 * params.noise_variance * (float(alpha @ alpha) - float(np.trace(k_inv)))
    )
    return value, grad


def log_marginal_likelihood(
    params: KernelParams,
    form: str,
    x,
    y,
    *,
    initial_jitter_factor: float = 1e-10,
    max_jitter_factor: float = 1e-4,
) -> float:
    """Log marginal likelihood -1/2 y'K^-1 y - 1/2 log|K| - (m/2) log 2pi."""
    x = _validated_features(x, params.n_features)
    y = _validated_targets(y, x.shape[0])
    kmat = gram_matrix(x, x, params, form, same_set=True)
    chol, _ = stable_cholesky(
        kmat,
        initial_jitter_factor=initial_jitter_factor,
        max_jitter_factor=max_jitter_factor,
    )
    alpha = cho_solve((chol, True), y, check_finite=False)
    return _lml_value(chol, alpha, y)


def lml_gradient(
    params: KernelParams,
    form: str,
    x,
    y,
    *,
    initial_jitter_factor: float = 1e-10,
    max_jitter_factor: float = 1e-4,
) -> np.ndarray:
    """Gradient of the log marginal likelihood in log-parameter space."""
    if form not in FORMS:
        raise ValueError(f"unknown kernel form {form!r}")
    x = _validated_features(x, params.n_features)
    y = _validated_targets(y, x.shape[0])
    _, grad = _lml_and_gradient(
        _log_params(params), x, y, form, initial_jitter_factor, max_jitter_factor
    )
    return grad


def _assemble_model(
    x: np.ndarray,
    y: np.ndarray,
    centered: np.ndarray,
    y_offset: float,
    params: KernelParams,
    form: str,
    initial_jitter_factor: float,
    max_jitter_factor: float,
    restart_log_marginals: tuple[float, ...] | None,
    chosen_restart: int,
) -> TrainedModel:
    kmat = gram_matrix(x, x, params, form, same_set=True)
    chol, jitter = stable_cholesky(
        kmat,
        initial_jitter_factor=initial_jitter_factor,
        max_jitter_factor=max_jitter_factor,
    )
    alpha = cho_solve((chol, True), centered, check_finite=False)
    value = _lml_value(chol, alpha, centered)
    if restart_log_marginals is None:
        restart_log_marginals = (value,)
    return TrainedModel(
        x=x,
        y=y,
        params=params,
        form=form,
        chol=chol,
        alpha=alpha,
        jitter=jitter,
        log_marginal_likelihood=value,
        y_offset=y_offset,
        restart_log_marginals=restart_log_marginals,
        chosen_restart=chosen_restart,
        initial_jitter_factor=initial_jitter_factor,
        max_jitter_factor=max_jitter_factor,
    )


def _restart_workers(n_tasks: int) -> int:
    """Worker count for concurrent restarts, capped by NORMATIVE_GP_THREADS."""
    raw = os.environ.get("NORMATIVE_GP_THREADS", "").strip()
    if raw:
        try:
            cap = int(raw)
        except ValueError as exc:
            raise ValueError("NORMATIVE_GP_THREADS must be an integer") from exc
        if cap < 1:
            raise ValueError("NORMATIVE_GP_THREADS must be >= 1")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


def fit(x, y, config: FitConfig | None = None) -> TrainedModel:
    """Train the GP by maximizing the log marginal likelihood.

    Runs ``config.restarts`` independent L-BFGS-B starts (drawn upfront from
    the seeded restart substream, so the outcome is independent of worker
    scheduling) and keeps the restart with the highest final log marginal
    likelihood; ties break toward the lowest restart index. Initial length
    scales are log-uniform in ``length_scale_init_range`` times each
    feature's standard deviation; initial noise variance is
    ``noise_variance_init_factor * var(y)``.
    """
    cfg = config if config is not None else FitConfig()
    x = _validated_features(x)
    m, n_features = x.shape
    if m < 2:
        raise ValueError("need at least 2 training subjects")
    y = _validated_targets(y, m)
    y_offset = float(np.mean(y)) if cfg.center_ages else 0.0
    centered = y - y_offset

    if cfg.fixed_params is not None:
        if cfg.fixed_params.n_features != n_features:
            raise ValueError(
                f"fixed_params has {cfg.fixed_params.n_features} length scales, "
                f"expected {n_features}"
            )
        return _assemble_model(
            x, y, centered, y_offset, cfg.fixed_params, cfg.form,
            cfg.initial_jitter_factor, cfg.max_jitter_factor, None, 0,
        )

    feature_scale = x.std(axis=0)
    feature_scale = np.where(feature_scale > 0.0, feature_scale, 1.0)
    y_var = float(np.var(centered))
    if y_var <= 0.0:
        y_var = 1.0
    log_noise_init = math.log(max(cfg.noise_variance_init_factor * y_var, 1e-300))
    lo, hi = cfg.length_scale_init_range
    rng = substream(cfg.seed, RESTARTS)
    inits = []
    for _ in range(cfg.restarts):
        offsets = rng.uniform(math.log(lo), math.log(hi), size=n_features)
        theta = np.concatenate([np.log(feature_scale) + offsets, [log_noise_init]])
        inits.append(np.clip(theta, -_LOG_PARAM_BOUND, _LOG_PARAM_BOUND))

    bounds = [(-_LOG_PARAM_BOUND, _LOG_PARAM_BOUND)] * (n_features + 1)

    def run_restart(theta0: np.ndarray) -> tuple[float, np.ndarray | None]:
        def objective(theta):
            try:
                value, grad = _lml_and_gradient(
                    theta, x, centered, cfg.form,
                    cfg.initial_jitter_factor, cfg.max_jitter_factor,
                )
            except ConditioningError:
                return _FAILURE_OBJECTIVE, np.zeros_like(theta)
            return -value, -grad

        result = optimize.minimize(
            objective,
            theta0,
            method="L-BFGS-B",
            jac=True,
            bounds=bounds,
            options={"maxiter": cfg.max_iterations, "ftol": 1e-12, "gtol": cfg.tolerance},
        )
        if not np.isfinite(result.fun) or result.fun >= 0.5 * _FAILURE_OBJECTIVE:
            return -math.inf, None
        return float(-result.fun), np.asarray(result.x)

    workers = _restart_workers(cfg.restarts)
    if workers == 1:
        outcomes = [run_restart(theta0) for theta0 in inits]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_restart, inits))

    best_index = -1
    best_value = -math.inf
    for index, (value, theta) in enumerate(outcomes):
        if theta is not None and value > best_value:
            best_index, best_value = index, value
    if best_index < 0:
        raise ConditioningError(
            f"all {cfg.restarts} restarts failed: the training Gram matrix could "
            "not be factorized at any visited hyperparameters"
        )
    params = _params_from_log(outcomes[best_index][1], n_features)
    return _assemble_model(
        x, y, centered, y_offset, params, cfg.form,
        cfg.initial_jitter_factor, cfg.max_jitter_factor,
        tuple(value for value, _ in outcomes), best_index,
    )


def restore(
    x,
    y,
    params: KernelParams,
    form: str,
    *,
    y_offset: float = 0.0,
    initial_jitter_factor: float = 1e-10,
    max_jitter_factor: float = 1e-4,
    restart_log_marginals: tuple[float, ...] | None = None,
    chosen_restart: int = 0,
) -> TrainedModel:
    """Rebuild a TrainedModel (factorization included) from stored pieces."""
    if form not in FORMS:
        raise ValueError(f"unknown kernel form {form!r}")
    x = _validated_features(x, params.n_features)
    y = _validated_targets(y, x.shape[0])
    centered = y - y_offset
    return _assemble_model(
        x, y, centered, y_offset, params, form,
        initial_jitter_factor, max_jitter_factor,
        restart_log_marginals, chosen_restart,
    )


def _posterior_variance(
    chol: np.ndarray, k_star: np.ndarray, prior: float
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior variance diagonal from the cross Gram block.

    Clamps tiny negative values (>= -1e-10) to zero; anything more negative
    is a genuine numerical failure.
    """
    v = solve_triangular(chol, k_star.T, lower=True, check_finite=False)
    raw = prior - np.sum(v * v, axis=0)
    worst = float(raw.min()) if raw.size else 0.0
    if worst < _NEGATIVE_VARIANCE_TOLERANCE:
        raise NumericalError(
            f"posterior variance {worst:.6e} is below the clamping tolerance "
            f"{_NEGATIVE_VARIANCE_TOLERANCE:.1e}"
        )
    return np.where(raw < 0.0, 0.0, raw), v


def predict(model: TrainedModel, x_test, *, full_cov: bool = False) -> PredictionResult:
    """Predictive mean and posterior (co)variance at new feature rows.

    The test-test prior is the noise-free kernel value k(x*, x*): the noise
    delta applies only inside the training Gram matrix, so for one training
    and one test point the variance is k(x*,x*) - k*^2/(k(x,x) + noise).
    When ``full_cov`` is requested its diagonal is set to the clamped
    variance vector exactly.
    """
    xt = _validated_features(x_test, model.params.n_features, "X_test")
    k_star = gram_matrix(xt, model.x, model.params, model.form)
    y_hat = k_star @ model.alpha + model.y_offset
    variance, v = _posterior_variance(
        model.chol, k_star, zero_distance_value(model.params, model.form)
    )
    cov = None
    if full_cov:
        k_tt = gram_matrix(xt, xt, model.params, model.form)
        cov = k_tt - v.T @ v
        np.fill_diagonal(cov, variance)
    return PredictionResult(y_hat=y_hat, variance=variance, full_cov=cov)


def weighted_posterior_cov(
    model: TrainedModel,
    x_test,
    test_ages,
    age_params: AgeKernelParams,
) -> WeightedCovariance:
    """Posterior covariance under the age-weighted kernel.

    All three Gram blocks are rebuilt with the weighted kernel from the
    training ages stored in the model and the supplied chronological test
    ages. The fitted feature hyperparameters are reused unchanged; age
    parameters are a user choice, never optimized. With an infinite age
    length scale and zero age noise this reproduces ``predict`` exactly.
    """
    xt = _validated_features(x_test, model.params.n_features, "X_test")
    ages = np.asarray(test_ages, dtype=float).reshape(-1)
    if ages.shape[0] != xt.shape[0]:
        raise ValueError("test_ages length must match X_test row count")
    if not np.all(np.isfinite(ages)):
        raise ValueError("test ages must be finite")
    k_train = gram_matrix(
        model.x, model.x, model.params, model.form,
        age_params=age_params, ages_a=model.y, ages_b=model.y, same_set=True,
    )
    chol, jitter = stable_cholesky(
        k_train,
        initial_jitter_factor=model.initial_jitter_factor,
        max_jitter_factor=model.max_jitter_factor,
    )
    k_star = gram_matrix(
        xt, model.x, model.params, model.form,
        age_params=age_params, ages_a=ages, ages_b=model.y,
    )
    variance, v = _posterior_variance(
        chol, k_star, zero_distance_value(model.params, model.form)
    )
    k_tt = gram_matrix(
        xt, xt, model.params, model.form,
        age_params=age_params, ages_a=ages, ages_b=ages,
    )
    cov = k_tt - v.T @ v
    np.fill_diagonal(cov, variance)
    return WeightedCovariance(variance=variance, full_cov=cov, jitter=jitter)
