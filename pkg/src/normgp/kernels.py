"""Covariance functions and Gram-matrix assembly.

Two stationary feature kernels are provided behind a ``form`` switch:

* ``"sum"`` (default): a sum of one-dimensional squared exponentials,
  ``k(x_i, x_j) = sum_k exp(-(x_i^k - x_j^k)^2 / (2 l_k^2)) + sigma_n^2 * delta``
* ``"product"``: the conventional ARD squared exponential,
  ``k(x_i, x_j) = exp(-sum_k (x_i^k - x_j^k)^2 / (2 l_k^2)) + sigma_n^2 * delta``

The delta term is indexed by *sample identity*, not by value equality:
it appears only on the diagonal of a Gram matrix built from one sample
set against itself. An optional age-similarity factor

    s(y_i, y_j) = exp(-(y_i - y_j)^2 / (2 l_y^2)) + sigma_y^2 * delta

turns either kernel into the age-weighted kernel ``k_w = s * k``. An
infinite age length scale makes ``s`` identically one, recovering the
unweighted kernel exactly (bitwise, not just approximately).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SUM = "sum"
PRODUCT = "product"
FORMS = (SUM, PRODUCT)


def _check_form(form: str) -> None:
    if form not in FORMS:
        raise ValueError(f"unknown kernel form {form!r}; expected one of {FORMS}")


@dataclass(frozen=True)
class KernelParams:
    """Feature-kernel hyperparameters: one length scale per feature plus noise variance."""

    length_scales: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        if ls.ndim != 1:
            raise ValueError("length_scales must be a 1-D vector")
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError("length_scales must be finite and strictly positive")
        if not math.isfinite(self.noise_variance) or self.noise_variance < 0:
            raise ValueError("noise_variance must be finite and >= 0")
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def n_features(self) -> int:
        return self.length_scales.shape[0]


@dataclass(frozen=True)
class AgeKernelParams:
    """Age-similarity hyperparameters. ``age_length_scale`` may be ``inf``."""

    age_length_scale: float = math.inf
    age_noise_variance: float = 0.0

    def __post_init__(self):
        if not self.age_length_scale > 0:  # rejects nan too
            raise ValueError("age_length_scale must be > 0 (infinity allowed)")
        if not math.isfinite(self.age_noise_variance) or self.age_noise_variance < 0:
            raise ValueError("age_noise_variance must be finite and >= 0")
        object.__setattr__(self, "age_length_scale", float(self.age_length_scale))
        object.__setattr__(self, "age_noise_variance", float(self.age_noise_variance))


def _as_matrix(x, n_features: int, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(x, dtype=float))
    if m.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix of feature rows")
    if m.shape[1] != n_features:
        raise ValueError(
            f"{name} has {m.shape[1]} columns but the kernel expects {n_features}"
        )
    return m


def zero_distance_value(params: KernelParams, form: str = SUM) -> float:
    """Kernel value at zero distance, before any delta term."""
    _check_form(form)
    return float(params.n_features) if form == SUM else 1.0


def prior_variance(
    params: KernelParams,
    form: str = SUM,
    age_params: AgeKernelParams | None = None,
) -> float:
    """Self-similarity of a sample with itself, delta terms included.

    This is the prior variance of a noisy observation: the diagonal entry
    of any same-set Gram matrix.
    """
    value = zero_distance_value(params, form) + params.noise_variance
    if age_params is not None:
        value = (1.0 + age_params.age_noise_variance) * value
    return value


def gram_matrix(
    a,
    b,
    params: KernelParams,
    form: str = SUM,
    *,
    age_params: AgeKernelParams | None = None,
    ages_a=None,
    ages_b=None,
    same_set: bool = False,
) -> np.ndarray:
    """Gram matrix of kernel values between the rows of ``a`` and ``b``.

    ``same_set=True`` asserts that ``a`` and ``b`` are the identical sample
    set, which places the delta (noise) terms on the diagonal. Ages must be
    supplied iff ``age_params`` is given; the result is then the
    age-weighted Gram matrix.

    Distances are accumulated per feature dimension, never through a
    squared-norm expansion, so near-duplicate rows do not cancel
    catastrophically.
    """
    _check_form(form)
    a = _as_matrix(a, params.n_features, "a")
    b = _as_matrix(b, params.n_features, "b")
    if age_params is not None and (ages_a is None or ages_b is None):
        raise ValueError("the age-weighted kernel requires ages for both row sets")
    if age_params is None and (ages_a is not None or ages_b is not None):
        raise ValueError("ages were supplied but no age_params; unweighted kernels ignore ages")

    ls = params.length_scales
    if form == SUM:
        k = np.zeros((a.shape[0], b.shape[0]))
        for dim in range(params.n_features):
            d = a[:, dim, None] - b[None, :, dim]
            k += np.exp(d * d / (-2.0 * ls[dim] * ls[dim]))
    else:
        q = np.zeros((a.shape[0], b.shape[0]))
        for dim in range(params.n_features):
            d = a[:, dim, None] - b[None, :, dim]
            q += d * d / (2.0 * ls[dim] * ls[dim])
        k = np.exp(-q)

    if age_params is not None:
        ya = np.atleast_1d(np.asarray(ages_a, dtype=float))
        yb = np.atleast_1d(np.asarray(ages_b, dtype=float))
        if ya.shape[0] != a.shape[0] or yb.shape[0] != b.shape[0]:
            raise ValueError("age vectors must match the corresponding row counts")
        dy = ya[:, None] - yb[None, :]
        ly = age_params.age_length_scale
        # ly == inf gives exp(-0.0) == 1.0, so the multiply is an exact no-op
        k *= np.exp(dy * dy / (-2.0 * ly * ly))

    if same_set:
        if a.shape[0] != b.shape[0]:
            raise ValueError("same_set=True requires square output")
        np.fill_diagonal(k, prior_variance(params, form, age_params))
    return k


def kernel_value(
    x_i,
    x_j,
    params: KernelParams,
    *,
    same_sample: bool = False,
    form: str = SUM,
) -> float:
    """Kernel between two feature vectors.

    ``same_sample=True`` means i and j index the identical sample, adding
    the noise-variance delta term.
    """
    k = gram_matrix(np.atleast_2d(x_i), np.atleast_2d(x_j), params, form)
    value = float(k[0, 0])
    if same_sample:
        value += params.noise_variance
    return value


def age_similarity(
    y_i: float,
    y_j: float,
    params: AgeKernelParams,
    *,
    same_sample: bool = False,
) -> float:
    """Age-similarity factor between two chronological ages."""
    for y in (y_i, y_j):
        if not math.isfinite(y):
            raise ValueError("ages must be finite")
    d = float(y_i) - float(y_j)
    ly = params.age_length_scale
    s = math.exp(d * d / (-2.0 * ly * ly))
    if same_sample:
        s += params.age_noise_variance
    return s


def weighted_kernel_value(
    x_i,
    x_j,
    y_i: float,
    y_j: float,
    params: KernelParams,
    age_params: AgeKernelParams,
    *,
    same_sample: bool = False,
    form: str = SUM,
) -> float:
    """Age-weighted kernel ``s(y_i, y_j) * k(x_i, x_j)``.

    The same-sample flag applies consistently to both factors.
    """
    return age_similarity(y_i, y_j, age_params, same_sample=same_sample) * kernel_value(
        x_i, x_j, params, same_sample=same_sample, form=form
    )
