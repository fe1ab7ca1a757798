"""Definite ordering of censored observations and the two-sample Gehan test"""

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy import stats

from .data_model import Dataset, IntervalObservation
from .exceptions import ValidationError

logger = logging.getLogger(__name__)


class Ordering(enum.Enum):
    DEFINITELY_LESS = "definitely_less"
    DEFINITELY_GREATER = "definitely_greater"
    INDETERMINATE = "indeterminate"


def _precedes(a_upper: float, a_exact: bool, b_lower: float, b_exact: bool) -> bool:
    # Two equal exact values are tied; any censored bound touching counts.
    if a_exact and b_exact:
        return a_upper < b_lower
    return a_upper <= b_lower


def definite_ordering(a: IntervalObservation, b: IntervalObservation) -> Ordering:
    """Whether a's event time is known to precede (or follow) b's"""
    if _precedes(a.upper, a.delta == 1, b.lower, b.delta == 1) and a.eta2 and b.eta1:
        return Ordering.DEFINITELY_LESS
    if _precedes(b.upper, b.delta == 1, a.lower, a.delta == 1) and b.eta2 and a.eta1:
        return Ordering.DEFINITELY_GREATER
    return Ordering.INDETERMINATE


def _precedence_matrix(data: Dataset) -> np.ndarray:
    """less[i, j] is True when subject i definitely precedes subject j"""
    upper = data.upper[:, None]
    lower = data.lower[None, :]
    both_exact = (data.delta[:, None] == 1) & (data.delta[None, :] == 1)
    ordered = np.where(both_exact, upper < lower, upper <= lower)
    return ordered & (data.eta2[:, None] == 1) & (data.eta1[None, :] == 1)


def ordered_pair_count(data: Dataset) -> int:
    """Number of pairs (i, j), i ≠ j, where i definitely precedes j"""
    starts = np.sort(data.lower[data.eta1 == 1])
    exact_values = np.sort(data.lower[data.delta == 1])
    rows = np.flatnonzero(data.eta2 == 1)
    upper = data.upper[rows]
    at_or_above = len(starts) - np.searchsorted(starts, upper, side='left')
    # equal exact values are tied, which also drops the self-pair
    ties = (np.searchsorted(exact_values, upper, side='right')
            - np.searchsorted(exact_values, upper, side='left'))
    at_or_above = at_or_above - np.where(data.delta[rows] == 1, ties, 0)
    return int(at_or_above.sum())


def gehan_scores(pooled: Dataset) -> np.ndarray:
    """G_i = #{j definitely below i} − #{j definitely above i}"""
    if pooled.n < 2:
        raise ValidationError("Gehan scores need at least two observations")
    less = _precedence_matrix(pooled)
    below = less.sum(axis=0)
    above = less.sum(axis=1)
    return (below - above).astype(float)


@dataclass(frozen=True)
class GehanTestResult:
    statistic: float
    variance: float
    z: float
    p_value: float
    per_subject_scores: List[float] = field(default_factory=list)
    degenerate: bool = False
    group_sizes: tuple = ()

    def to_dict(self) -> dict:
        return {
            'statistic': self.statistic,
            'variance': self.variance,
            'z': self.z,
            'p_value': self.p_value,
            'degenerate': self.degenerate,
            'group_sizes': list(self.group_sizes),
            'per_subject_scores': list(self.per_subject_scores),
        }


def two_sample_test(group1: Dataset, group2: Dataset) -> GehanTestResult:
    """Gehan's generalized Wilcoxon test with the permutation variance"""
    m, n = group1.n, group2.n
    if m == 0 or n == 0:
        raise ValidationError("both groups must be nonempty")

    pooled = Dataset.pooled([group1.without_covariates(), group2.without_covariates()])
    scores = gehan_scores(pooled)
    statistic = float(scores[:m].sum())
    total = m + n
    variance = float(m * n / (total * (total - 1)) * np.dot(scores, scores))

    if variance <= 0:
        logger.warning("Gehan test variance is zero; every pair is indeterminate")
        return GehanTestResult(statistic, 0.0, 0.0, 1.0, scores.tolist(), True, (m, n))

    z = statistic / math.sqrt(variance)
    p_value = float(min(1.0, 2.0 * stats.norm.sf(abs(z))))
    return GehanTestResult(statistic, variance, z, p_value, scores.tolist(), False, (m, n))
