"""Observation and dataset types for partly interval-censored survival data"""

import logging
import math
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .exceptions import RowError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

COVARIATE_PATTERN = re.compile(r"^x(\d+)$")


@dataclass(frozen=True)
class IntervalObservation:
    """One subject's bracketed event time on the original time scale.

    ``lower == 0`` means no lower bound and ``upper == inf`` means no upper
    bound. Exact observations have ``lower == upper`` and ``delta == 1``.
    """

    lower: float
    upper: float
    delta: int
    covariates: Tuple[float, ...]
    cluster: Hashable = None

    def __post_init__(self):
        if self.delta not in (0, 1):
            raise ValidationError(f"delta must be 0 or 1, got {self.delta!r}")
        if math.isnan(self.lower) or math.isnan(self.upper):
            raise ValidationError("bracket bounds must not be NaN")
        if self.lower < 0:
            raise ValidationError(f"negative lower bound {self.lower}")
        if self.lower > self.upper:
            raise ValidationError(f"lower bound {self.lower} exceeds upper bound {self.upper}")
        if self.delta == 1:
            if self.lower != self.upper:
                raise ValidationError("exact observation must have lower == upper")
            if not 0 < self.lower < math.inf:
                raise ValidationError(f"exact time must be finite and positive, got {self.lower}")
        elif self.lower == self.upper:
            raise ValidationError("censored observation must have lower < upper")
        if not all(math.isfinite(v) for v in self.covariates):
            raise ValidationError("covariates must be finite")

    @property
    def eta1(self) -> int:
        """1 when the lower bound is informative"""
        return 1 if self.delta == 1 or self.lower > 0 else 0

    @property
    def eta2(self) -> int:
        """1 when the upper bound is informative"""
        return 1 if self.delta == 1 or self.upper < math.inf else 0

    @property
    def kind(self) -> str:
        if self.delta == 1:
            return "exact"
        if self.lower == 0 and self.upper == math.inf:
            return "uninformative"
        if self.lower == 0:
            return "left"
        if self.upper == math.inf:
            return "right"
        return "interval"


def _as_covariates(x: Sequence[float]) -> Tuple[float, ...]:
    try:
        values = tuple(float(v) for v in x)
    except (TypeError, ValueError):
        raise ValidationError(f"covariates must be numeric, got {x!r}")
    if not all(math.isfinite(v) for v in values):
        raise ValidationError("covariates must be finite")
    return values


def from_pic_record(delta: int, t: Optional[float], u: Optional[float], v: Optional[float],
                    x: Sequence[float], cluster: Hashable = None) -> IntervalObservation:
    """Build an observation from a PIC record (Δ, T, U, V, X)"""
    covariates = _as_covariates(x)
    if delta == 1:
        if t is None or not math.isfinite(t) or t <= 0:
            raise ValidationError(f"exact time must be finite and positive, got {t!r}")
        return IntervalObservation(float(t), float(t), 1, covariates, cluster)
    if delta != 0:
        raise ValidationError(f"delta must be 0 or 1, got {delta!r}")
    if u is None or v is None:
        raise ValidationError("censored record needs both u and v")
    if u < 0 or v < 0:
        raise ValidationError(f"negative time in bracket ({u}, {v})")
    if not math.isfinite(u):
        raise ValidationError("lower bracket must be finite")
    if u >= v:
        raise ValidationError(f"censored record needs u < v, got ({u}, {v})")
    return IntervalObservation(float(u), float(v), 0, covariates, cluster)


def from_dc_record(t_tilde: float, d1: int, d2: int, d3: int,
                   x: Sequence[float], cluster: Hashable = None) -> IntervalObservation:
    """Reduce a doubly-censored record (T̃, δ1, δ2, δ3) to its PIC bracket"""
    flags = (d1, d2, d3)
    if any(f not in (0, 1) for f in flags) or sum(flags) != 1:
        raise ValidationError(f"exactly one of d1, d2, d3 must be 1, got {flags}")
    if t_tilde is None or not math.isfinite(t_tilde) or t_tilde <= 0:
        raise ValidationError(f"observed time must be finite and positive, got {t_tilde!r}")
    covariates = _as_covariates(x)
    if d1 == 1:
        return IntervalObservation(float(t_tilde), float(t_tilde), 1, covariates, cluster)
    if d2 == 1:
        return IntervalObservation(float(t_tilde), math.inf, 0, covariates, cluster)
    return IntervalObservation(0.0, float(t_tilde), 0, covariates, cluster)


def _log_time(value: float) -> float:
    if value == 0:
        return -math.inf
    if value == math.inf:
        return math.inf
    return math.log(value)


def residual_bounds(obs: IntervalObservation, beta: Sequence[float]) -> Tuple[float, float]:
    """Observed residual bracket (log Ũ − β'X, log Ṽ − β'X)"""
    if len(beta) != len(obs.covariates):
        raise ValueError(f"beta has length {len(beta)}, expected {len(obs.covariates)}")
    fitted = math.fsum(b * x for b, x in zip(beta, obs.covariates))
    return _log_time(obs.lower) - fitted, _log_time(obs.upper) - fitted


class Dataset:
    """Immutable, validated collection of interval observations.

    Column arrays are built once at construction and marked read-only so the
    dataset can be shared between worker threads.
    """

    def __init__(self, observations: Sequence[IntervalObservation], p: Optional[int] = None):
        observations = tuple(observations)
        if not observations:
            raise ValidationError("dataset is empty")

        dims = {len(obs.covariates) for obs in observations}
        if p is None:
            p = len(observations[0].covariates)
        if dims != {p}:
            raise ValidationError(f"covariate vectors must all have length {p}, found lengths {sorted(dims)}")
        if all(obs.lower == 0 and obs.upper == math.inf for obs in observations):
            raise ValidationError("no observation carries a finite bound")

        self._observations = observations
        self._p = p

        clusters: "OrderedDict[Hashable, List[int]]" = OrderedDict()
        for index, obs in enumerate(observations):
            key = index if obs.cluster is None else obs.cluster
            clusters.setdefault(key, []).append(index)
        self._clusters = OrderedDict((key, tuple(members)) for key, members in clusters.items())

        cluster_index = np.empty(len(observations), dtype=np.int64)
        for position, members in enumerate(self._clusters.values()):
            cluster_index[list(members)] = position

        self.lower = np.array([obs.lower for obs in observations], dtype=float)
        self.upper = np.array([obs.upper for obs in observations], dtype=float)
        self.delta = np.array([obs.delta for obs in observations], dtype=np.int64)
        self.X = np.array([obs.covariates for obs in observations], dtype=float).reshape(len(observations), p)
        self.eta1 = np.array([obs.eta1 for obs in observations], dtype=np.int64)
        self.eta2 = np.array([obs.eta2 for obs in observations], dtype=np.int64)
        self.cluster_index = cluster_index
        self.cluster_sizes = np.array([len(m) for m in self._clusters.values()], dtype=np.int64)
        with np.errstate(divide='ignore'):
            self.log_lower = np.log(self.lower)
            self.log_upper = np.log(self.upper)

        for array in (self.lower, self.upper, self.delta, self.X, self.eta1, self.eta2,
                      self.cluster_index, self.cluster_sizes, self.log_lower, self.log_upper):
            array.setflags(write=False)

    @property
    def observations(self) -> Tuple[IntervalObservation, ...]:
        return self._observations

    @property
    def p(self) -> int:
        return self._p

    @property
    def n(self) -> int:
        """Number of subjects"""
        return len(self._observations)

    @property
    def n_clusters(self) -> int:
        return len(self._clusters)

    @property
    def clusters(self) -> Dict[Hashable, Tuple[int, ...]]:
        """Cluster id → member indices, in order of first appearance"""
        return dict(self._clusters)

    def __len__(self) -> int:
        return len(self._observations)

    def __iter__(self):
        return iter(self._observations)

    def residuals(self, beta: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized residual brackets u(β), v(β) for every subject"""
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self._p,):
            raise ValueError(f"beta has shape {beta.shape}, expected ({self._p},)")
        fitted = self.X @ beta
        return self.log_lower - fitted, self.log_upper - fitted

    def without_covariates(self) -> "Dataset":
        """Same brackets and clusters with covariates dropped (p = 0)"""
        return Dataset([IntervalObservation(o.lower, o.upper, o.delta, (), o.cluster) for o in self], p=0)

    def summary(self) -> Dict[str, float]:
        """Censoring composition of the dataset"""
        counts = {'exact': 0, 'left': 0, 'right': 0, 'interval': 0, 'uninformative': 0}
        for obs in self._observations:
            counts[obs.kind] += 1
        n = float(self.n)
        result: Dict[str, float] = {'n': self.n, 'clusters': self.n_clusters}
        for key, count in counts.items():
            result[key] = count
            result[f"{key}_fraction"] = count / n
        result['censored_fraction'] = 1.0 - counts['exact'] / n
        return result

    @staticmethod
    def pooled(datasets: Sequence["Dataset"]) -> "Dataset":
        """Concatenate datasets, keeping clusters distinct per source"""
        observations = []
        for source, data in enumerate(datasets):
            for key, members in data.clusters.items():
                for index in members:
                    obs = data.observations[index]
                    observations.append(IntervalObservation(obs.lower, obs.upper, obs.delta,
                                                            obs.covariates, (source, key)))
        return Dataset(observations, p=datasets[0].p if datasets else None)


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for CSV ingestion.

    ``layout`` is ``"pic"`` (lower/upper/delta columns) or ``"dc"``
    (time plus three indicator columns). An empty ``covariates`` list means
    every column named ``x1``, ``x2``, ... in numeric order.
    """

    layout: str = "pic"
    lower: str = "lower"
    upper: str = "upper"
    delta: str = "delta"
    time: str = "time"
    d1: str = "d1"
    d2: str = "d2"
    d3: str = "d3"
    cluster: Optional[str] = "cluster"
    covariates: Tuple[str, ...] = field(default_factory=tuple)
    require_covariates: bool = True

    def __post_init__(self):
        if self.layout not in ("pic", "dc"):
            raise SchemaError(f"unknown layout {self.layout!r}, expected 'pic' or 'dc'")

    def required_columns(self) -> List[str]:
        if self.layout == "pic":
            return [self.lower, self.upper, self.delta]
        return [self.time, self.d1, self.d2, self.d3]


def _read_frame(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file does not exist: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ValidationError(f"{path} is empty")
    except pd.errors.ParserError as e:
        raise ValidationError(f"{path}: inconsistent column count ({e})")
    frame.columns = [str(c).strip() for c in frame.columns]
    return frame


def _covariate_columns(frame: pd.DataFrame, schema: CsvSchema) -> List[str]:
    if schema.covariates:
        missing = [c for c in schema.covariates if c not in frame.columns]
        if missing:
            raise SchemaError(f"missing covariate columns: {', '.join(missing)}")
        return list(schema.covariates)
    found = [(int(m.group(1)), c) for c in frame.columns for m in [COVARIATE_PATTERN.match(c)] if m]
    if not found and schema.require_covariates:
        raise SchemaError("no covariate columns found (expected x1..xp or --covariates)")
    return [c for _, c in sorted(found)]


def _parse_float(text: str, column: str, row: int, errors: List[RowError]) -> Optional[float]:
    text = text.strip()
    if text == "":
        errors.append(RowError(row, column, "missing value"))
        return None
    try:
        return float(text)
    except ValueError:
        errors.append(RowError(row, column, f"not a number: {text!r}"))
        return None


def _parse_flag(text: str, column: str, row: int, errors: List[RowError]) -> Optional[int]:
    value = _parse_float(text, column, row, errors)
    if value is None:
        return None
    if value not in (0.0, 1.0):
        errors.append(RowError(row, column, f"indicator must be 0 or 1, got {text.strip()!r}"))
        return None
    return int(value)


def _parse_records(frame: pd.DataFrame, schema: CsvSchema) -> List[IntervalObservation]:
    missing = [c for c in schema.required_columns() if c not in frame.columns]
    if missing:
        raise SchemaError(f"missing columns: {', '.join(missing)}")
    covariate_columns = _covariate_columns(frame, schema)
    cluster_column = schema.cluster if schema.cluster and schema.cluster in frame.columns else None
    if frame.empty:
        raise ValidationError("dataset is empty")

    observations: List[IntervalObservation] = []
    errors: List[RowError] = []
    # data rows are numbered from 2, the header being line 1
    for offset, record in enumerate(frame.to_dict(orient='records')):
        row = offset + 2
        row_errors: List[RowError] = []
        x = [_parse_float(record[c], c, row, row_errors) for c in covariate_columns]
        cluster = record[cluster_column].strip() if cluster_column else None
        if cluster == "":
            row_errors.append(RowError(row, cluster_column, "missing cluster id"))

        if schema.layout == "pic":
            lower = _parse_float(record[schema.lower], schema.lower, row, row_errors)
            upper = _parse_float(record[schema.upper], schema.upper, row, row_errors)
            delta = _parse_flag(record[schema.delta], schema.delta, row, row_errors)
        else:
            time = _parse_float(record[schema.time], schema.time, row, row_errors)
            flags = [_parse_flag(record[c], c, row, row_errors) for c in (schema.d1, schema.d2, schema.d3)]

        if not row_errors:
            try:
                if schema.layout == "pic":
                    if delta == 1 and lower != upper:
                        raise ValidationError(f"exact row needs lower == upper, got ({lower}, {upper})")
                    observations.append(from_pic_record(delta, lower, lower, upper, x, cluster))
                else:
                    observations.append(from_dc_record(time, *flags, x, cluster))
            except ValidationError as e:
                row_errors.append(RowError(row, None, str(e)))
        errors.extend(row_errors)

    if errors:
        raise ValidationError(f"{len(errors)} invalid value(s) in input", errors)
    return observations


def load_csv(path, schema: CsvSchema = None) -> Dataset:
    """Load and validate a dataset from CSV"""
    schema = schema or CsvSchema()
    frame = _read_frame(path)
    observations = _parse_records(frame, schema)
    dataset = Dataset(observations)
    logger.info(f"Loaded {dataset.n} observations in {dataset.n_clusters} clusters from {path}")
    return dataset


def load_csv_groups(path, schema: CsvSchema, group_column: str) -> "OrderedDict[str, Dataset]":
    """Load a CSV and split it into one dataset per value of ``group_column``"""
    frame = _read_frame(path)
    if group_column not in frame.columns:
        raise SchemaError(f"missing group column: {group_column}")
    groups: "OrderedDict[str, Dataset]" = OrderedDict()
    labels = frame[group_column].str.strip()
    for label in labels.drop_duplicates():
        part = frame[labels == label].reset_index(drop=True)
        groups[label] = Dataset(_parse_records(part, schema))
    return groups


def write_pic_csv(dataset: Dataset, path) -> Path:
    """Write a dataset in the PIC layout; the inverse of ``load_csv``"""
    path = Path(path)
    columns = {
        'lower': dataset.lower,
        'upper': dataset.upper,
        'delta': dataset.delta,
        'cluster': [_cluster_label(obs.cluster, i) for i, obs in enumerate(dataset)],
    }
    for j in range(dataset.p):
        columns[f"x{j + 1}"] = dataset.X[:, j]
    pd.DataFrame(columns).to_csv(path, index=False, float_format="%.17g")
    return path


def _cluster_label(cluster: Hashable, index: int) -> str:
    if cluster is None:
        return f"s{index + 1}"
    if isinstance(cluster, tuple):
        return ":".join(str(part) for part in cluster)
    return str(cluster)
