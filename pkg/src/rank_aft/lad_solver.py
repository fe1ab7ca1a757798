"""Weighted least absolute deviation solver"""

import logging
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog, lsq_linear

from .exceptions import UnidentifiedDirectionError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1.0e-7
DEFAULT_MAX_ITER = 200
# well below DEFAULT_TOL so an exact optimum is not reported as a gap
GAP_TOL = 1.0e-12


@dataclass(frozen=True)
class PseudoObservation:
    """One term w·|c − β'd| of a LAD objective"""

    response: float
    design: Tuple[float, ...]
    weight: float


class PseudoRows:
    """Columnar block of pseudo-observations.

    Holds the same information as a list of ``PseudoObservation`` without
    materializing one Python object per pair.
    """

    def __init__(self, response, design, weight):
        self.response = np.ascontiguousarray(response, dtype=float).reshape(-1)
        self.design = np.ascontiguousarray(design, dtype=float).reshape(len(self.response), -1)
        self.weight = np.ascontiguousarray(weight, dtype=float).reshape(-1)
        if self.weight.shape != self.response.shape:
            raise ValidationError("response and weight must have the same length")
        if not (np.all(np.isfinite(self.response)) and np.all(np.isfinite(self.design))
                and np.all(np.isfinite(self.weight))):
            raise ValidationError("pseudo-observations must be finite")
        if np.any(self.weight < 0):
            raise ValidationError("pseudo-observation weights must be nonnegative")

    @classmethod
    def from_observations(cls, rows: Iterable[PseudoObservation], p: Optional[int] = None) -> "PseudoRows":
        rows = list(rows)
        if not rows:
            return cls.empty(p or 0)
        return cls([r.response for r in rows], [r.design for r in rows], [r.weight for r in rows])

    @classmethod
    def empty(cls, p: int) -> "PseudoRows":
        return cls(np.empty(0), np.empty((0, p)), np.empty(0))

    @classmethod
    def concat(cls, blocks: Sequence["PseudoRows"], p: int) -> "PseudoRows":
        blocks = [b for b in blocks if len(b)]
        if not blocks:
            return cls.empty(p)
        return cls(np.concatenate([b.response for b in blocks]),
                   np.vstack([b.design for b in blocks]),
                   np.concatenate([b.weight for b in blocks]))

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def __len__(self) -> int:
        return len(self.response)

    def __iter__(self) -> Iterator[PseudoObservation]:
        for c, d, w in zip(self.response, self.design, self.weight):
            yield PseudoObservation(float(c), tuple(float(v) for v in d), float(w))

    def scaled(self, factor: float) -> "PseudoRows":
        return PseudoRows(self.response, self.design, self.weight * factor)


@dataclass(frozen=True)
class SolveDiagnostics:
    """Outcome of a LAD solve.

    ``subgradient_gap`` is the norm of the minimum-norm subgradient at the
    returned point, relative to Σ w_k‖d_k‖.
    """

    objective: float
    iterations: int
    subgradient_gap: float
    converged: bool
    message: str = ""


def _as_rows(rows) -> PseudoRows:
    if isinstance(rows, PseudoRows):
        return rows
    return PseudoRows.from_observations(rows)


def objective_value(rows, beta: Sequence[float]) -> float:
    """Σ_k w_k |c_k − β'd_k|"""
    rows = _as_rows(rows)
    if len(rows) == 0:
        return 0.0
    residual = rows.response - rows.design @ np.asarray(beta, dtype=float)
    return float(np.sum(rows.weight * np.abs(residual)))


def weighted_median(values, weights) -> float:
    """Lowest minimizer of Σ w_k |y_k − t|"""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    keep = weights > 0
    if not np.any(keep):
        raise ValidationError("weighted median needs a positive weight")
    values, weights = values[keep], weights[keep]
    order = np.argsort(values, kind='mergesort')
    cumulative = np.cumsum(weights[order])
    index = int(np.searchsorted(cumulative, 0.5 * cumulative[-1], side='left'))
    return float(values[order][min(index, len(values) - 1)])


def _check_rank(design: np.ndarray) -> None:
    p = design.shape[1]
    if design.shape[0] == 0:
        null = np.zeros(p)
        null[0] = 1.0
        raise UnidentifiedDirectionError("no informative pseudo-observations", null)
    _, singular, vt = np.linalg.svd(design, full_matrices=False)
    cutoff = singular.max() * max(design.shape) * np.finfo(float).eps
    if len(singular) < p or singular[-1] <= cutoff:
        null = vt[-1] if len(singular) == p else _null_direction(vt, p)
        raise UnidentifiedDirectionError(
            f"unidentified direction {np.array2string(null, precision=6)}", null)


def _null_direction(vt: np.ndarray, p: int) -> np.ndarray:
    # fewer rows than columns: complete the row space and return its complement
    q, _ = np.linalg.qr(np.vstack([vt, np.eye(p)]).T)
    return q[:, vt.shape[0]]


def _solve_dual(response, design, weight, max_iter) -> Tuple[Optional[np.ndarray], int, str]:
    """Interior point on the dual max c'a s.t. D'a = 0, |a_k| ≤ w_k"""
    result = linprog(
        -response,
        A_eq=design.T,
        b_eq=np.zeros(design.shape[1]),
        bounds=np.column_stack([-weight, weight]),
        method='highs-ipm',
        options={'maxiter': max_iter},
    )
    iterations = int(getattr(result, 'nit', 0) or 0)
    if result.status != 0 or result.eqlin is None:
        return None, iterations, str(result.message)
    marginals = np.asarray(result.eqlin.marginals, dtype=float)
    candidates = [marginals, -marginals]
    objectives = [np.sum(weight * np.abs(response - design @ b)) for b in candidates]
    return candidates[int(np.argmin(objectives))], iterations, str(result.message)


def _polish(response, design, weight, beta, max_sweeps) -> Tuple[np.ndarray, int]:
    """Weighted-median coordinate descent; only strictly improving moves are kept"""
    beta = beta.copy()
    best = np.sum(weight * np.abs(response - design @ beta))
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        improved = False
        for k in range(design.shape[1]):
            column = design[:, k]
            active = column != 0
            if not np.any(active):
                continue
            partial = response - design @ beta + column * beta[k]
            candidate = beta.copy()
            candidate[k] = weighted_median(partial[active] / column[active],
                                           weight[active] * np.abs(column[active]))
            value = np.sum(weight * np.abs(response - design @ candidate))
            if value < best * (1 - 1e-15) - 1e-300:
                beta, best, improved = candidate, value, True
        if not improved:
            break
    return beta, sweeps


def subgradient_gap(response, design, weight, beta) -> float:
    """Relative norm of the minimum-norm element of the subdifferential"""
    residual = response - design @ beta
    row_scale = np.abs(response) + np.abs(design) @ np.abs(beta) + 1.0
    zero = np.abs(residual) <= 1e-9 * row_scale
    fixed = -(weight[~zero] * np.sign(residual[~zero])) @ design[~zero]
    if np.any(zero):
        free = (design[zero] * weight[zero, None]).T
        fit = lsq_linear(free, -fixed, bounds=(-1.0, 1.0), method='bvls', tol=GAP_TOL)
        minimum = fixed + free @ fit.x
    else:
        minimum = fixed
    scale = float(np.sum(weight * np.linalg.norm(design, axis=1)))
    return float(np.linalg.norm(minimum) / scale) if scale > 0 else 0.0


def minimize_lad(rows, init: Optional[Sequence[float]] = None, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER) -> Tuple[np.ndarray, SolveDiagnostics]:
    """Minimize Σ_k w_k |c_k − β'd_k| over β"""
    rows = _as_rows(rows)
    p = rows.p
    beta0 = np.zeros(p) if init is None else np.asarray(init, dtype=float).copy()
    if beta0.shape != (p,):
        raise ValidationError(f"init has shape {beta0.shape}, expected ({p},)")
    if not np.any(rows.weight > 0):
        raise ValidationError("at least one pseudo-observation needs a positive weight")

    degenerate = ~np.any(rows.design != 0, axis=1)
    keep = (rows.weight > 0) & ~degenerate
    constant = float(np.sum(rows.weight[degenerate] * np.abs(rows.response[degenerate])))
    response, design, weight = rows.response[keep], rows.design[keep], rows.weight[keep]
    _check_rank(design)

    def total(b):
        return float(np.sum(weight * np.abs(response - design @ b))) + constant

    beta, iterations, message = _solve_dual(response, design, weight, max_iter)
    lp_ok = beta is not None
    if not lp_ok:
        logger.warning(f"LAD interior point did not finish: {message}")
        beta = beta0.copy()

    gap = subgradient_gap(response, design, weight, beta) if lp_ok else np.inf
    if gap > tol:
        beta, sweeps = _polish(response, design, weight, beta, max(1, max_iter - iterations))
        iterations += sweeps
        gap = None

    if total(beta0) < total(beta):
        beta, gap = beta0, None

    if gap is None:
        gap = subgradient_gap(response, design, weight, beta)
    converged = lp_ok and gap <= tol
    if not converged:
        logger.warning(f"LAD solve not converged (gap {gap:.3g}, tol {tol:.3g}): {message}")
    return beta, SolveDiagnostics(total(beta), iterations, gap, converged, message)
