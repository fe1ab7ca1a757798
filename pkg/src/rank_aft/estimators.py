"""Gehan and weighted log-rank rank estimators for the AFT model.

Univariate data is handled as clustered data whose clusters all have size
one, so the cluster weights ϕ are identically 1 there.
"""

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .data_model import Dataset
from .exceptions import SchemaError, ValidationError, ZeroEstimatingFunctionError
from .gehan_ranks import ordered_pair_count
from .lad_solver import DEFAULT_MAX_ITER, DEFAULT_TOL, PseudoRows, SolveDiagnostics, minimize_lad

logger = logging.getLogger(__name__)

MAX_BIG_M_DOUBLINGS = 5
BIG_M_FACTOR = 10.0


class WeightKind(enum.Enum):
    GEHAN = "gehan"
    LOGRANK = "logrank"


@dataclass(frozen=True)
class ClusterWeight:
    """ϕ_i = m_i^(−alpha); alpha 0 is unit weight, alpha 1 inverse size"""

    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise SchemaError(f"cluster weight power must lie in [0, 1], got {self.alpha}")

    @classmethod
    def unit(cls) -> "ClusterWeight":
        return cls(0.0)

    @classmethod
    def inverse_size(cls) -> "ClusterWeight":
        return cls(1.0)

    @classmethod
    def power(cls, alpha: float) -> "ClusterWeight":
        return cls(float(alpha))

    @classmethod
    def parse(cls, text: str) -> "ClusterWeight":
        """Parse ``none``, ``inverse`` or ``power:<alpha>``"""
        value = str(text).strip().lower()
        if value in ("none", "unit", "unadjusted"):
            return cls.unit()
        if value in ("inverse", "adjusted"):
            return cls.inverse_size()
        if value.startswith("power:"):
            try:
                return cls.power(float(value.split(":", 1)[1]))
            except ValueError:
                pass
        raise SchemaError(f"invalid cluster weight {text!r} (use none, inverse or power:alpha)")

    @property
    def adjusted(self) -> bool:
        return self.alpha > 0

    @property
    def label(self) -> str:
        if self.alpha == 0:
            return "none"
        if self.alpha == 1:
            return "inverse"
        return f"power:{self.alpha:g}"

    def weights(self, sizes: np.ndarray) -> np.ndarray:
        sizes = np.asarray(sizes, dtype=float)
        if self.alpha == 0:
            return np.ones_like(sizes)
        if self.alpha == 1:
            return 1.0 / sizes
        return sizes ** (-self.alpha)


@dataclass(frozen=True)
class WeightSpec:
    kind: WeightKind = WeightKind.GEHAN
    cluster_weight: ClusterWeight = field(default_factory=ClusterWeight.unit)

    @classmethod
    def parse(cls, kind: str, cluster_weight: str = "none") -> "WeightSpec":
        try:
            weight_kind = WeightKind(str(kind).strip().lower())
        except ValueError:
            raise SchemaError(f"invalid weight kind {kind!r} (use gehan or logrank)")
        return cls(weight_kind, ClusterWeight.parse(cluster_weight))

    def as_gehan(self) -> "WeightSpec":
        return replace(self, kind=WeightKind.GEHAN)

    def to_dict(self) -> dict:
        return {
            'kind': self.kind.value,
            'cluster_weight': self.cluster_weight.label,
            'cluster_adjusted': self.cluster_weight.adjusted,
        }


@dataclass(frozen=True)
class FitConfig:
    weight: WeightSpec = field(default_factory=WeightSpec)
    big_m: Optional[float] = None
    max_outer_iter: int = 50
    outer_tol: float = 1.0e-4
    seed: int = 0
    solver_tol: float = DEFAULT_TOL
    solver_max_iter: int = DEFAULT_MAX_ITER
    block_size: int = 256

    def __post_init__(self):
        if self.max_outer_iter < 1:
            raise SchemaError("max_outer_iter must be at least 1")
        if self.outer_tol <= 0:
            raise SchemaError("outer_tol must be positive")
        if self.big_m is not None and self.big_m <= 0:
            raise SchemaError("big_m must be positive")
        if self.seed < 0:
            raise SchemaError(f"seed must be nonnegative, got {self.seed}")


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    covariance: Optional[np.ndarray]
    outer_iterations: int
    score_norm: float
    weight: WeightSpec
    n_pairs_used: int
    converged: bool = True
    objective: float = float('nan')
    n_clusters: int = 0
    solver: Optional[SolveDiagnostics] = None
    last_iterates: Tuple[Tuple[float, ...], ...] = ()

    @property
    def p(self) -> int:
        return len(self.beta)

    def with_covariance(self, covariance: Optional[np.ndarray]) -> "FitResult":
        return replace(self, covariance=covariance)

    def standard_errors(self) -> Optional[np.ndarray]:
        if self.covariance is None:
            return None
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def cluster_weights(data: Dataset, wspec: WeightSpec) -> np.ndarray:
    """ϕ for every subject (its cluster's weight)"""
    return wspec.cluster_weight.weights(data.cluster_sizes)[data.cluster_index]


def _risk_sums(data: Dataset, u: np.ndarray, v: np.ndarray,
               j_weight: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For each i: Σ_j a_j I{v_i ≤ u_j}, Σ_j a_j X_j I{..}, Σ_j a_j u_j I{..}, a_j = j_weight·η1_j"""
    lower_side = data.eta1 == 1
    u_j = u[lower_side]
    a_j = j_weight[lower_side]
    order = np.argsort(u_j, kind='mergesort')
    u_sorted = u_j[order]
    a_sorted = a_j[order]
    x_sorted = data.X[lower_side][order]

    def suffix(values):
        totals = np.cumsum(values[::-1], axis=0)[::-1]
        pad = np.zeros((1,) + values.shape[1:])
        return np.concatenate([totals, pad], axis=0)

    a_suffix = suffix(a_sorted)
    ax_suffix = suffix(a_sorted[:, None] * x_sorted)
    au_suffix = suffix(a_sorted * u_sorted)
    start = np.searchsorted(u_sorted, v, side='left')
    return a_suffix[start], ax_suffix[start], au_suffix[start]


def weighted_pair_sum(data: Dataset, beta, i_weight: np.ndarray, j_weight: np.ndarray) -> np.ndarray:
    """n⁻¹ Σ_i Σ_j i_w η2_i j_w η1_j (X_i − X_j) I{v_i(β) ≤ u_j(β)}"""
    u, v = data.residuals(beta)
    den, num, _ = _risk_sums(data, u, v, j_weight)
    upper_side = (data.eta2 == 1).astype(float) * i_weight
    terms = upper_side[:, None] * (den[:, None] * data.X - num)
    return terms.sum(axis=0) / data.n_clusters


def at_risk(data: Dataset, beta, wspec: WeightSpec) -> np.ndarray:
    """Σ_j ϕ_j η1_j I{u_j(β) ≥ v_i(β)} for every subject i"""
    u, v = data.residuals(beta)
    den, _, _ = _risk_sums(data, u, v, cluster_weights(data, wspec))
    return den


def logrank_weights(data: Dataset, anchor, wspec: WeightSpec) -> np.ndarray:
    """w_i{b, v_i(b)} = φ_i(b) / Σ_j ϕ_j η1_j I{u_j(b) ≥ v_i(b)}, 0 when nobody is at risk"""
    den = at_risk(data, anchor, wspec)
    weights = np.zeros(data.n)
    positive = den > 0
    if wspec.kind is WeightKind.GEHAN:
        weights[positive] = 1.0
    else:
        weights[positive] = 1.0 / den[positive]
    return weights


def estimating_function(data: Dataset, beta, phi: np.ndarray, wspec: WeightSpec) -> np.ndarray:
    """n⁻¹ Σ_i ϕ_i η2_i φ_i [X_i − Σ_j ϕ_j η1_j X_j I / Σ_j ϕ_j η1_j I] with a given φ"""
    u, v = data.residuals(beta)
    cw = cluster_weights(data, wspec)
    den, num, _ = _risk_sums(data, u, v, cw)
    active = (data.eta2 == 1) & (den > 0)
    terms = np.zeros_like(data.X)
    terms[active] = (cw[active] * np.asarray(phi, dtype=float)[active])[:, None] * (
        data.X[active] - num[active] / den[active, None])
    return terms.sum(axis=0) / data.n_clusters


def score(data: Dataset, beta, wspec: WeightSpec) -> np.ndarray:
    """Rank estimating function S(β) for the chosen weight"""
    beta = np.asarray(beta, dtype=float)
    if wspec.kind is WeightKind.GEHAN:
        cw = cluster_weights(data, wspec)
        return weighted_pair_sum(data, beta, cw, cw)
    return estimating_function(data, beta, np.ones(data.n), wspec)


def surrogate_score(data: Dataset, beta, wspec: WeightSpec, anchor) -> np.ndarray:
    """Monotone surrogate S(β, b) whose weights are frozen at the anchor b"""
    cw = cluster_weights(data, wspec)
    w = logrank_weights(data, anchor, wspec)
    return weighted_pair_sum(data, np.asarray(beta, dtype=float), cw * w, cw)


def objective(data: Dataset, beta, wspec: WeightSpec, anchor=None) -> float:
    """L(β) = n⁻¹ Σ pair weight · {v_i(β) − u_j(β)}₋"""
    cw = cluster_weights(data, wspec)
    if wspec.kind is WeightKind.LOGRANK:
        if anchor is None:
            raise ValidationError("log-rank objective needs an anchor")
        i_weight = cw * logrank_weights(data, anchor, wspec)
    else:
        i_weight = cw
    u, v = data.residuals(beta)
    den, _, u_sum = _risk_sums(data, u, v, cw)
    upper_side = data.eta2 == 1
    # Σ_j a_j (u_j − v_i) over u_j ≥ v_i
    deficit = np.where(upper_side, u_sum - den * np.where(upper_side, v, 0.0), 0.0)
    return float(np.sum(i_weight * deficit) / data.n_clusters)


def iter_pair_index(data: Dataset, wspec: WeightSpec, anchor=None,
                    block_size: int = 256) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(i, j, weight) for every ordered pair with η2_i η1_j = 1, i ≠ j and a positive weight.

    Pairs are produced ``block_size`` i-rows at a time as index arrays, so a
    block costs three flat arrays rather than a block×|J|×p design.
    """
    if wspec.kind is WeightKind.LOGRANK and anchor is None:
        raise ValidationError("log-rank pseudo-observations need the current iterate as anchor")
    cw = cluster_weights(data, wspec)
    i_factor = cw if wspec.kind is WeightKind.GEHAN else cw * logrank_weights(data, anchor, wspec)

    i_index = np.flatnonzero((data.eta2 == 1) & (i_factor > 0))
    j_index = np.flatnonzero(data.eta1 == 1)
    cw_j = cw[j_index]

    for start in range(0, len(i_index), block_size):
        block = i_index[start:start + block_size]
        keep = block[:, None] != j_index[None, :]
        rows, cols = np.nonzero(keep)
        yield block[rows], j_index[cols], i_factor[block[rows]] * cw_j[cols]


def _pair_rows(data: Dataset, i: np.ndarray, j: np.ndarray, weight: np.ndarray) -> PseudoRows:
    return PseudoRows(data.log_upper[i] - data.log_lower[j], data.X[i] - data.X[j], weight)


def iter_pair_blocks(data: Dataset, wspec: WeightSpec, anchor=None,
                     block_size: int = 256) -> Iterator[PseudoRows]:
    """Pseudo-observations for every ordered pair with η2_i η1_j = 1, i ≠ j.

    Pairs are produced ``block_size`` i-rows at a time.
    """
    for i, j, weight in iter_pair_index(data, wspec, anchor, block_size):
        yield _pair_rows(data, i, j, weight)


def build_gehan_pseudo(data: Dataset, wspec: WeightSpec, b_anchor=None,
                       big_m: Optional[float] = None, block_size: int = 256) -> PseudoRows:
    """Pair rows plus the artificial big-M row turning the rank objective into LAD.

    Index blocks are written straight into preallocated response, design and
    weight arrays; the last slot holds the big-M row.
    """
    if data.p < 1:
        raise ValidationError("fitting needs at least one covariate")
    blocks = list(iter_pair_index(data, wspec, b_anchor, block_size))
    n_pairs = sum(len(i) for i, _, _ in blocks)
    if n_pairs == 0:
        raise ZeroEstimatingFunctionError("estimating function identically zero: no usable pairs")

    response = np.empty(n_pairs + 1)
    design = np.empty((n_pairs + 1, data.p))
    weight = np.empty(n_pairs + 1)
    offset = 0
    for i, j, w in blocks:
        end = offset + len(i)
        np.subtract(data.log_upper[i], data.log_lower[j], out=response[offset:end])
        np.subtract(data.X[i], data.X[j], out=design[offset:end])
        weight[offset:end] = w
        offset = end

    pull = -(weight[:n_pairs] @ design[:n_pairs])
    if big_m is None:
        big_m = BIG_M_FACTOR * float(weight[:n_pairs] @ np.abs(response[:n_pairs]))
        big_m = max(big_m, 1.0)
    response[n_pairs] = big_m
    design[n_pairs] = pull
    weight[n_pairs] = 1.0
    return PseudoRows(response, design, weight)


def _with_big_m(rows: PseudoRows, big_m: float) -> PseudoRows:
    response = rows.response.copy()
    response[-1] = big_m
    return PseudoRows(response, rows.design, rows.weight)


def _solve_rank_objective(data: Dataset, wspec: WeightSpec, cfg: FitConfig, anchor=None,
                          init=None) -> Tuple[np.ndarray, SolveDiagnostics, int]:
    if ordered_pair_count(data) == 0:
        raise ZeroEstimatingFunctionError(
            "estimating function identically zero: no pair of observations is definitely ordered")
    rows = build_gehan_pseudo(data, wspec, anchor, cfg.big_m, cfg.block_size)
    n_pairs = len(rows) - 1
    if not np.any(rows.design[:-1] != 0):
        raise ZeroEstimatingFunctionError("estimating function identically zero: all pair designs vanish")

    for doubling in range(MAX_BIG_M_DOUBLINGS + 1):
        beta, diag = minimize_lad(rows, init, cfg.solver_tol, cfg.solver_max_iter)
        slack = rows.response[-1] - float(rows.design[-1] @ beta)
        if slack > 0:
            return beta, diag, n_pairs
        if doubling == MAX_BIG_M_DOUBLINGS:
            break
        logger.warning(f"big-M row inactive (slack {slack:.3g}); doubling M to {2 * rows.response[-1]:.6g}")
        rows = _with_big_m(rows, 2.0 * rows.response[-1])

    logger.warning("big-M row still inactive after doubling; result flagged")
    return beta, replace(diag, converged=False, message="big-M row inactive"), n_pairs


def fit_gehan(data: Dataset, cfg: FitConfig = None) -> FitResult:
    """Gehan estimator: minimizer of the convex Gehan objective"""
    cfg = cfg or FitConfig()
    wspec = cfg.weight.as_gehan()
    beta, diag, n_pairs = _solve_rank_objective(data, wspec, cfg)
    score_norm = float(np.max(np.abs(score(data, beta, wspec))))
    logger.debug(f"Gehan fit beta={beta} score_norm={score_norm:.3g}")
    return FitResult(
        beta=beta,
        covariance=None,
        outer_iterations=0,
        score_norm=score_norm,
        weight=wspec,
        n_pairs_used=n_pairs,
        converged=diag.converged,
        objective=objective(data, beta, wspec),
        n_clusters=data.n_clusters,
        solver=diag,
    )


def fit_logrank(data: Dataset, cfg: FitConfig = None) -> FitResult:
    """Log-rank estimator by iterating the monotone surrogate from the Gehan fit"""
    cfg = cfg or FitConfig()
    wspec = replace(cfg.weight, kind=WeightKind.LOGRANK)
    start = fit_gehan(data, cfg)

    previous = start.beta
    beta = previous
    diag = start.solver
    n_pairs = start.n_pairs_used
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_outer_iter + 1):
        beta, diag, n_pairs = _solve_rank_objective(data, wspec, cfg, anchor=previous, init=previous)
        step = float(np.max(np.abs(beta - previous)))
        logger.debug(f"log-rank iteration {iterations}: step {step:.3g}")
        if step < cfg.outer_tol:
            converged = True
            break
        if iterations < cfg.max_outer_iter:
            previous = beta

    if not converged:
        logger.warning(f"log-rank iteration did not settle within {cfg.max_outer_iter} steps")

    return FitResult(
        beta=beta,
        covariance=None,
        outer_iterations=iterations,
        score_norm=float(np.max(np.abs(score(data, beta, wspec)))),
        weight=wspec,
        n_pairs_used=n_pairs,
        converged=converged and diag.converged,
        objective=objective(data, beta, wspec, anchor=previous),
        n_clusters=data.n_clusters,
        solver=diag,
        last_iterates=(tuple(previous.tolist()), tuple(beta.tolist())),
    )


def fit(data: Dataset, cfg: FitConfig = None) -> FitResult:
    cfg = cfg or FitConfig()
    if cfg.weight.kind is WeightKind.LOGRANK:
        return fit_logrank(data, cfg)
    return fit_gehan(data, cfg)


def pairwise_score(data: Dataset, beta, wspec: WeightSpec, anchor=None,
                   block_size: int = 256) -> np.ndarray:
    """Explicit double-sum form of S(β) (or S(β, b) for log-rank)"""
    beta = np.asarray(beta, dtype=float)
    total = np.zeros(data.p)
    for rows in iter_pair_blocks(data, wspec, anchor, block_size):
        ordered = rows.response - rows.design @ beta <= 0
        total += (rows.weight[ordered][:, None] * rows.design[ordered]).sum(axis=0)
    return total / data.n_clusters


def residual_brackets(data: Dataset, beta: Sequence[float]) -> pd.DataFrame:
    """Residual brackets (u_i(β), v_i(β)) per subject"""
    keys = list(data.clusters.keys())
    u, v = data.residuals(beta)
    return pd.DataFrame({
        'lower_residual': u,
        'upper_residual': v,
        'delta': data.delta,
        'cluster': [str(keys[c]) for c in data.cluster_index],
    })
