"""Resampling sandwich covariance for rank estimators.

Ω is the covariance of the multiplier-perturbed score at β̂; the slope A
comes from regressing the score at β̂ + n^(−1/2) K_r on K_r. Both need only
score evaluations, never a re-solve of the estimating equation.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from . import rng
from .data_model import Dataset
from .estimators import (FitConfig, FitResult, WeightKind, WeightSpec, cluster_weights, fit,
                         logrank_weights, score, weighted_pair_sum)
from .exceptions import ValidationError
from .workers import ordered_map

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1.0e12
CLIP_WARNING_RATIO = 1.0e-8


@dataclass(frozen=True)
class ResampleConfig:
    R: int = 200
    seed: int = 0
    k_scale: float = 1.0

    def __post_init__(self):
        if self.R < 2:
            raise ValidationError("at least two resamples are required")
        if not self.k_scale > 0:
            raise ValidationError("k_scale must be positive; K_r ≡ 0 cannot identify the slope")
        if self.seed < 0:
            raise ValidationError(f"seed must be nonnegative, got {self.seed}")


@dataclass(frozen=True)
class CovarianceEstimate:
    """Γ̂ = Â⁻¹ Ω̂ (Â⁻¹)' for √n(β̂ − β0); ``covariance`` is Γ̂/n"""

    gamma: Optional[np.ndarray]
    omega: np.ndarray
    a_matrix: np.ndarray
    condition_flag: bool
    covariance: Optional[np.ndarray]
    n: int
    message: str = ""


def perturbed_score(data: Dataset, beta_hat, z: Sequence[float],
                    wspec: WeightSpec = None) -> np.ndarray:
    """Score at β̂ with cluster multipliers Z_i·Z_j on every pair"""
    wspec = wspec or WeightSpec()
    z = np.asarray(z, dtype=float)
    if z.shape != (data.n_clusters,):
        raise ValidationError(f"need one multiplier per cluster ({data.n_clusters}), got {z.shape}")
    if np.any(z < 0):
        raise ValidationError("multipliers must be nonnegative")
    multiplier = z[data.cluster_index] * cluster_weights(data, wspec)
    i_weight = multiplier
    if wspec.kind is WeightKind.LOGRANK:
        i_weight = multiplier * logrank_weights(data, beta_hat, wspec)
    return weighted_pair_sum(data, np.asarray(beta_hat, dtype=float), i_weight, multiplier)


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    symmetric = 0.5 * (matrix + matrix.T)
    values, vectors = np.linalg.eigh(symmetric)
    clipped = np.clip(values, 0.0, None)
    lost = float(np.sum(clipped - values))
    trace = float(np.sum(clipped))
    if lost > CLIP_WARNING_RATIO * max(trace, np.finfo(float).tiny):
        logger.warning(f"covariance had negative eigenvalues; clipped mass {lost:.3g} (trace {trace:.3g})")
    if lost == 0.0:
        return symmetric
    return (vectors * clipped) @ vectors.T


def resampling_sandwich(perturbed_draw: Callable[[np.random.Generator], np.ndarray],
                        shifted_score: Callable[[np.ndarray], np.ndarray],
                        p: int, n: int, rcfg: ResampleConfig, threads: int = 1) -> CovarianceEstimate:
    """Sandwich covariance from a perturbed-score sampler and a shifted-score evaluator.

    ``perturbed_draw(gen)`` returns one row of √n·S*(β̂); ``shifted_score(K)``
    returns √n·S(β̂ + n^(−1/2) K).
    """
    if rcfg.R < p + 1:
        raise ValidationError(f"R = {rcfg.R} resamples cannot identify a {p}×{p} slope; use at least {p + 1}")

    omega_rows = ordered_map(lambda r: perturbed_draw(rng.stream(rcfg.seed, rng.TAG_OMEGA, r)),
                             range(rcfg.R), threads)
    omega = np.atleast_2d(np.cov(np.vstack(omega_rows), rowvar=False, ddof=1))

    shifts = [rng.stream(rcfg.seed, rng.TAG_SLOPE, r).normal(0.0, rcfg.k_scale, size=p) for r in range(rcfg.R)]
    slope_rows = ordered_map(shifted_score, shifts, threads)

    design = np.column_stack([np.ones(rcfg.R), np.vstack(shifts)])
    coefficients, *_ = np.linalg.lstsq(design, np.vstack(slope_rows), rcond=None)
    a_matrix = coefficients[1:].T

    condition = np.linalg.cond(a_matrix)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        message = f"slope matrix is singular (condition {condition:.3g}); increase the number of resamples R"
        logger.warning(message)
        return CovarianceEstimate(None, omega, a_matrix, True, None, n, message)

    a_inverse = np.linalg.inv(a_matrix)
    gamma = a_inverse @ omega @ a_inverse.T
    asymmetry = float(np.max(np.abs(gamma - gamma.T)))
    gamma = _symmetrize(gamma)
    logger.debug(f"sandwich assembled: condition {condition:.3g}, asymmetry {asymmetry:.3g}")
    return CovarianceEstimate(gamma, omega, a_matrix, False, gamma / n, n)


def estimate_covariance(data: Dataset, beta_hat, wspec: WeightSpec, rcfg: ResampleConfig = None,
                        threads: int = 1, fit_result: Optional[FitResult] = None) -> CovarianceEstimate:
    """Resampling covariance of β̂ for data, clustered or not"""
    rcfg = rcfg or ResampleConfig()
    beta_hat = np.asarray(beta_hat, dtype=float)
    mismatch = ""
    if fit_result is not None and fit_result.weight != wspec:
        mismatch = (f"weight {wspec.to_dict()} differs from the fitted weight "
                    f"{fit_result.weight.to_dict()}")
        logger.warning(mismatch)

    n = data.n_clusters
    root_n = np.sqrt(n)

    def perturbed_draw(gen):
        z = gen.exponential(1.0, size=n)
        return root_n * perturbed_score(data, beta_hat, z, wspec)

    def shifted_score(shift):
        return root_n * score(data, beta_hat + shift / root_n, wspec)

    estimate = resampling_sandwich(perturbed_draw, shifted_score, data.p, n, rcfg, threads)
    if mismatch:
        message = "; ".join(m for m in (estimate.message, mismatch) if m)
        estimate = CovarianceEstimate(estimate.gamma, estimate.omega, estimate.a_matrix,
                                      estimate.condition_flag, estimate.covariance, n, message)
    return estimate


def wald_ci(fit_result: FitResult, level: float = 0.95) -> List[Tuple[float, float]]:
    """β̂_j ± z_{(1+level)/2} · se_j"""
    if not 0 < level < 1:
        raise ValidationError(f"confidence level must lie in (0, 1), got {level}")
    if fit_result.covariance is None:
        raise ValidationError("fit has no covariance estimate")
    quantile = stats.norm.ppf(0.5 * (1.0 + level))
    se = fit_result.standard_errors()
    return [(float(b - quantile * s), float(b + quantile * s)) for b, s in zip(fit_result.beta, se)]


def wald_table(fit_result: FitResult, level: float = 0.95,
               names: Optional[Sequence[str]] = None) -> List[dict]:
    """Per-coefficient estimate, standard error, Wald z, p-value and interval"""
    names = list(names) if names else [f"x{j + 1}" for j in range(fit_result.p)]
    intervals = wald_ci(fit_result, level)
    rows = []
    for name, estimate, se, (lower, upper) in zip(names, fit_result.beta, fit_result.standard_errors(), intervals):
        z = float(estimate / se) if se > 0 else float('nan')
        p_value = float(2.0 * stats.norm.sf(abs(z))) if se > 0 else float('nan')
        rows.append({
            'name': name,
            'estimate': float(estimate),
            'std_error': float(se),
            'z': z,
            'p_value': p_value,
            'ci_lower': lower,
            'ci_upper': upper,
        })
    return rows


def fit_with_covariance(data: Dataset, cfg: FitConfig, rcfg: ResampleConfig = None,
                        threads: int = 1) -> Tuple[FitResult, CovarianceEstimate]:
    """Fit, then attach the resampling covariance (Absent when Â is singular)"""
    result = fit(data, cfg)
    if not result.converged:
        logger.warning(f"{result.weight.kind.value} fit did not converge after {result.outer_iterations} "
                       f"iteration(s); covariance is computed at the last iterate")
    estimate = estimate_covariance(data, result.beta, result.weight, rcfg, threads, result)
    return result.with_covariance(estimate.covariance), estimate
