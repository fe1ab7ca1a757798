"""Simulated AFT data and replicated Monte Carlo studies"""

import enum
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from scipy import stats

from . import rng
from .data_model import Dataset, IntervalObservation, from_dc_record, from_pic_record
from .estimators import FitConfig, WeightSpec
from .exceptions import CalibrationError, RankAftError, SchemaError, StudyAbortedError, ValidationError
from .gehan_ranks import two_sample_test
from .variance import ResampleConfig, fit_with_covariance
from .workers import ordered_map

logger = logging.getLogger(__name__)

PILOT_SIZE = 10_000
CALIBRATION_TOLERANCE = 0.03
MAX_FAILURE_RATE = 0.05
MIN_CP_REPLICATES = 50
INTERCEPT = 2.0
TAU = 100.0
GAP_RANGE = (0.1, 1.0)
LEFT_START = -6.0
RIGHT_START = 6.0


class ScenarioKind(enum.Enum):
    PIC = "pic"
    DC = "dc"
    PIC_CLUSTERED = "pic_clustered"
    DC_CLUSTERED = "dc_clustered"

    @property
    def clustered(self) -> bool:
        return self in (ScenarioKind.PIC_CLUSTERED, ScenarioKind.DC_CLUSTERED)

    @property
    def doubly_censored(self) -> bool:
        return self in (ScenarioKind.DC, ScenarioKind.DC_CLUSTERED)


class ErrorLaw(enum.Enum):
    NORMAL = "normal"
    EXTREME_VALUE = "ev"
    EXP1 = "exp1"

    def draw(self, gen: np.random.Generator, size) -> np.ndarray:
        if self is ErrorLaw.NORMAL:
            return gen.standard_normal(size)
        if self is ErrorLaw.EXTREME_VALUE:
            # minimum-type Gumbel, location 0, scale 1
            return -gen.gumbel(0.0, 1.0, size)
        return gen.exponential(1.0, size)


@dataclass(frozen=True)
class ScenarioConfig:
    kind: ScenarioKind = ScenarioKind.PIC
    n: int = 200
    error: ErrorLaw = ErrorLaw.NORMAL
    censoring: float = 0.30
    left_censoring: float = 0.15
    right_censoring: float = 0.15
    theta: float = 1.0
    seed: int = 0
    beta: Tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        if self.n < 20:
            raise ValidationError(f"n must be at least 20, got {self.n}")
        for name in ('censoring', 'left_censoring', 'right_censoring'):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1), got {value}")
        if self.left_censoring + self.right_censoring >= 1.0:
            raise ValidationError("left and right censoring rates must sum to less than 1")
        if not self.theta > 0:
            raise ValidationError(f"theta must be positive, got {self.theta}")
        if len(self.beta) != 2:
            raise ValidationError("scenarios have exactly two coefficients")
        if self.seed < 0:
            raise ValidationError(f"seed must be nonnegative, got {self.seed}")

    @classmethod
    def from_mapping(cls, values: Dict) -> "ScenarioConfig":
        known = {'kind', 'n', 'error', 'censoring', 'left_censoring', 'right_censoring', 'theta', 'seed', 'beta'}
        unknown = set(values) - known
        if unknown:
            raise SchemaError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
        kwargs = dict(values)
        try:
            if 'kind' in kwargs:
                kwargs['kind'] = ScenarioKind(str(kwargs['kind']).lower())
            if 'error' in kwargs:
                kwargs['error'] = ErrorLaw(str(kwargs['error']).lower())
        except ValueError as e:
            raise SchemaError(str(e))
        if 'beta' in kwargs:
            kwargs['beta'] = tuple(float(b) for b in kwargs['beta'])
        for key in ('n', 'seed'):
            if key in kwargs:
                kwargs[key] = int(kwargs[key])
        for key in ('censoring', 'left_censoring', 'right_censoring', 'theta'):
            if key in kwargs:
                kwargs[key] = float(kwargs[key])
        return cls(**kwargs)

    def to_dict(self) -> Dict:
        values = asdict(self)
        values['kind'] = self.kind.value
        values['error'] = self.error.value
        values['beta'] = list(self.beta)
        return values


@dataclass(frozen=True)
class FitOption:
    label: str
    weight: WeightSpec

    @classmethod
    def parse(cls, text: str) -> "FitOption":
        """``gehan``, ``logrank``, optionally ``/inverse`` or ``/power:a``"""
        kind, _, cluster = str(text).partition("/")
        return cls(str(text), WeightSpec.parse(kind, cluster or "none"))


@dataclass(frozen=True)
class StudyPlan:
    """A scenario plus what to fit on it; the content of a scenario file"""

    scenario: ScenarioConfig
    fits: Tuple[FitOption, ...] = (FitOption("gehan", WeightSpec()),)
    replicates: int = 200
    resamples: int = 200
    level: float = 0.95


def load_study_plan(path) -> StudyPlan:
    """Read a ``key: value`` scenario file"""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"scenario file does not exist: {path}")
    with open(path, 'r') as f:
        values = yaml.safe_load(f) or {}
    if not isinstance(values, dict):
        raise SchemaError(f"scenario file {path} must contain key: value pairs")
    study_keys = {'fits', 'replicates', 'resamples', 'level'}
    scenario = ScenarioConfig.from_mapping({k: v for k, v in values.items() if k not in study_keys})
    fits = values.get('fits', ["gehan"])
    if isinstance(fits, str):
        fits = [f.strip() for f in fits.split(",") if f.strip()]
    return StudyPlan(
        scenario=scenario,
        fits=tuple(FitOption.parse(f) for f in fits),
        replicates=int(values.get('replicates', 200)),
        resamples=int(values.get('resamples', 200)),
        level=float(values.get('level', 0.95)),
    )


@dataclass(frozen=True)
class Calibration:
    p0: Optional[float] = None
    c_left: Optional[float] = None
    c_right: Optional[float] = None
    realized: Tuple[Tuple[str, float], ...] = ()


@dataclass(frozen=True)
class _Latent:
    X: np.ndarray
    log_t: np.ndarray
    clusters: Optional[np.ndarray]
    frailty: Optional[np.ndarray] = None


def _draw_latent(gen: np.random.Generator, cfg: ScenarioConfig, units: int) -> _Latent:
    """Covariates and log event times; ``units`` subjects or clusters"""
    beta = np.asarray(cfg.beta)
    if not cfg.kind.clustered:
        X = np.column_stack([gen.standard_normal(units), gen.binomial(1, 0.5, units).astype(float)])
        return _Latent(X, INTERCEPT + X @ beta + cfg.error.draw(gen, units), None)

    shape, scale = 1.0 / cfg.theta, cfg.theta
    frailty = gen.gamma(shape, scale, units)
    decile = np.floor(10.0 * stats.gamma.cdf(frailty, a=shape, scale=scale)).astype(int)
    sizes = np.clip(decile, 0, 9) + 2
    clusters = np.repeat(np.arange(units), sizes)
    total = int(sizes.sum())
    X = np.column_stack([gen.standard_normal(total), gen.binomial(1, 0.5, total).astype(float)])
    log_t = INTERCEPT + X @ beta + frailty[clusters] * cfg.error.draw(gen, total)
    return _Latent(X, log_t, clusters, frailty)


def _cluster_id(latent: _Latent, index: int):
    return None if latent.clusters is None else int(latent.clusters[index])


def _examination_bracket(gen: np.random.Generator, t: float) -> Tuple[float, float]:
    """Adjacent examination times around t; gaps Uniform(0.1, 1), visits stop before τ"""
    last = 0.0
    while True:
        gaps = gen.uniform(GAP_RANGE[0], GAP_RANGE[1], 64)
        visits = last + np.cumsum(gaps)
        beyond = np.flatnonzero((visits > t) | (visits >= TAU))
        if beyond.size:
            k = int(beyond[0])
            previous = last if k == 0 else float(visits[k - 1])
            if visits[k] >= TAU:
                # no further visit inside follow-up: right-censored at the last one
                return previous, math.inf
            return previous, float(visits[k])
        last = float(visits[-1])


def _overlay_pic(gen: np.random.Generator, latent: _Latent, p0: float) -> List[IntervalObservation]:
    exact_prob = np.clip(p0 - 0.1 * (latent.X[:, 1] == 1), 0.0, 1.0)
    exact = gen.uniform(size=len(latent.log_t)) < exact_prob
    observations = []
    for i, log_t in enumerate(latent.log_t):
        t = math.exp(log_t)
        cluster = _cluster_id(latent, i)
        if exact[i]:
            observations.append(from_pic_record(1, t, None, None, latent.X[i], cluster))
            continue
        lower, upper = _examination_bracket(gen, t)
        observations.append(from_pic_record(0, None, lower, upper, latent.X[i], cluster))
    return observations


def _dc_bounds(X: np.ndarray, u_left: np.ndarray, u_right: np.ndarray,
               c_left: float, c_right: float) -> Tuple[np.ndarray, np.ndarray]:
    log_l = (1.0 - 0.25 * X[:, 0]) * (LEFT_START + (c_left - LEFT_START) * u_left)
    log_r = log_l + (1.0 - 0.5 * X[:, 1]) * (RIGHT_START + (c_right - RIGHT_START) * u_right)
    return log_l, log_r


def _dc_indicators(log_t, log_l, log_r) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    left = log_t <= log_l
    right = ~left & (log_t > log_r)
    exact = ~left & ~right
    return exact, right, left


def _overlay_dc(gen: np.random.Generator, latent: _Latent, c_left: float,
                c_right: float) -> List[IntervalObservation]:
    size = len(latent.log_t)
    log_l, log_r = _dc_bounds(latent.X, gen.uniform(size=size), gen.uniform(size=size), c_left, c_right)
    exact, right, left = _dc_indicators(latent.log_t, log_l, log_r)
    observed = np.where(left, log_l, np.where(right, log_r, latent.log_t))
    return [
        from_dc_record(math.exp(observed[i]), int(exact[i]), int(right[i]), int(left[i]),
                       latent.X[i], _cluster_id(latent, i))
        for i in range(size)
    ]


def _bisect(fn: Callable[[float], float], target: float, low: float, high: float,
            increasing: bool, iterations: int = 60) -> float:
    for _ in range(iterations):
        middle = 0.5 * (low + high)
        above = fn(middle) > target
        if above == increasing:
            high = middle
        else:
            low = middle
    return 0.5 * (low + high)


def _pilot(cfg: ScenarioConfig) -> Tuple[np.random.Generator, _Latent]:
    gen = rng.stream(cfg.seed, rng.TAG_PILOT)
    units = PILOT_SIZE
    if cfg.kind.clustered:
        # mean cluster size is 6.5
        units = int(math.ceil(PILOT_SIZE / 6.5))
    return gen, _draw_latent(gen, cfg, units)


def calibrate(cfg: ScenarioConfig) -> Calibration:
    """Choose p0 (PIC) or (c_L, c_R) (DC) to hit the target censoring on a pilot sample"""
    gen, latent = _pilot(cfg)
    size = len(latent.log_t)

    if not cfg.kind.doubly_censored:
        draws = gen.uniform(size=size)
        x2 = latent.X[:, 1] == 1

        def censored(p0):
            return float(np.mean(draws >= np.clip(p0 - 0.1 * x2, 0.0, 1.0)))

        p0 = _bisect(censored, cfg.censoring, 0.0, 1.1, increasing=False)
        realized = censored(p0)
        if abs(realized - cfg.censoring) > CALIBRATION_TOLERANCE:
            raise CalibrationError(f"censoring {cfg.censoring:.0%} unreachable (pilot {realized:.1%})")
        logger.debug(f"calibrated p0={p0:.4f} for censoring {cfg.censoring:.0%}")
        return Calibration(p0=p0, realized=(('censored', realized),))

    u_left, u_right = gen.uniform(size=size), gen.uniform(size=size)

    def rates(c_left, c_right):
        log_l, log_r = _dc_bounds(latent.X, u_left, u_right, c_left, c_right)
        _, right, left = _dc_indicators(latent.log_t, log_l, log_r)
        return float(np.mean(left)), float(np.mean(right))

    c_left = _bisect(lambda c: rates(c, RIGHT_START)[0], cfg.left_censoring, LEFT_START, 40.0, increasing=True)
    c_right = _bisect(lambda c: rates(c_left, c)[1], cfg.right_censoring, -6.0, 60.0, increasing=False)
    left_rate, right_rate = rates(c_left, c_right)
    if (abs(left_rate - cfg.left_censoring) > CALIBRATION_TOLERANCE
            or abs(right_rate - cfg.right_censoring) > CALIBRATION_TOLERANCE):
        raise CalibrationError(
            f"censoring ({cfg.left_censoring:.0%}, {cfg.right_censoring:.0%}) unreachable "
            f"(pilot {left_rate:.1%}, {right_rate:.1%})")
    logger.debug(f"calibrated c_L={c_left:.4f}, c_R={c_right:.4f}")
    return Calibration(c_left=c_left, c_right=c_right, realized=(('left', left_rate), ('right', right_rate)))


def _generate(cfg: ScenarioConfig, calibration: Optional[Calibration], replicate: int) -> Dataset:
    calibration = calibration or calibrate(cfg)
    gen = rng.stream(cfg.seed, rng.TAG_REPLICATE, replicate)
    latent = _draw_latent(gen, cfg, cfg.n)
    if cfg.kind.doubly_censored:
        observations = _overlay_dc(gen, latent, calibration.c_left, calibration.c_right)
    else:
        observations = _overlay_pic(gen, latent, calibration.p0)
    return Dataset(observations)


def gen_pic(cfg: ScenarioConfig, calibration: Calibration = None, replicate: int = 0) -> Dataset:
    """Univariate partly interval-censored sample"""
    return _generate(replace(cfg, kind=ScenarioKind.PIC), calibration, replicate)


def gen_dc(cfg: ScenarioConfig, calibration: Calibration = None, replicate: int = 0) -> Dataset:
    """Univariate doubly-censored sample, reduced to PIC brackets"""
    return _generate(replace(cfg, kind=ScenarioKind.DC), calibration, replicate)


def gen_clustered(cfg: ScenarioConfig, calibration: Calibration = None, replicate: int = 0) -> Dataset:
    """Clustered sample with gamma frailties and informative cluster sizes 2..11"""
    if not cfg.kind.clustered:
        kind = ScenarioKind.DC_CLUSTERED if cfg.kind.doubly_censored else ScenarioKind.PIC_CLUSTERED
        cfg = replace(cfg, kind=kind)
    return _generate(cfg, calibration, replicate)


def generate(cfg: ScenarioConfig, calibration: Calibration = None, replicate: int = 0) -> Dataset:
    return _generate(cfg, calibration, replicate)


@dataclass(frozen=True)
class ParameterRow:
    fit: str
    parameter: str
    truth: float
    bias: float
    ese: float
    ase: float
    cp: float
    mse: float


@dataclass
class McStudyReport:
    scenario: Dict
    rows: List[ParameterRow]
    replicates: int
    failures: int
    wall_time: float
    censoring: Dict[str, float]
    calibration: Dict[str, float]
    outer_iterations: Dict[str, List[int]] = field(default_factory=dict)
    raw_estimates: Optional[pd.DataFrame] = None

    def row(self, fit: str, parameter: str) -> ParameterRow:
        for row in self.rows:
            if row.fit == fit and row.parameter == parameter:
                return row
        raise KeyError((fit, parameter))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows],
                            columns=['fit', 'parameter', 'truth', 'bias', 'ese', 'ase', 'cp', 'mse'])

    def to_dict(self) -> Dict:
        return {
            'scenario': self.scenario,
            'replicates': self.replicates,
            'failures': self.failures,
            'censoring': self.censoring,
            'calibration': self.calibration,
            'rows': [asdict(r) for r in self.rows],
        }


def relative_efficiency(report: McStudyReport, target: str, reference: str) -> Dict[str, float]:
    """MSE(reference) / MSE(target) per parameter; above 1 favours ``target``"""
    result = {}
    for row in report.rows:
        if row.fit != target:
            continue
        other = report.row(reference, row.parameter)
        result[row.parameter] = other.mse / row.mse if row.mse > 0 else math.inf
    return result


@dataclass(frozen=True)
class _ReplicateOutcome:
    replicate: int
    estimates: Dict[str, Tuple[np.ndarray, np.ndarray, int]]
    censoring: Dict[str, float]
    error: Optional[str] = None


def run_mc_study(cfg: ScenarioConfig, fit_options: Sequence[FitOption], replicates: int,
                 resamples: int = 200, level: float = 0.95, threads: int = 1,
                 keep_raw: bool = False, fit_config: FitConfig = None) -> McStudyReport:
    """Replicate generate → fit → covariance and summarize Bias/ESE/ASE/CP/MSE"""
    if replicates < 1:
        raise ValidationError("replicates must be positive")
    if replicates < MIN_CP_REPLICATES:
        logger.warning(f"{replicates} replicates is below {MIN_CP_REPLICATES}; coverage estimates are rough")
    fit_options = list(fit_options)
    if not fit_options:
        raise ValidationError("at least one fit option is required")
    base = fit_config or FitConfig()
    started = time.perf_counter()
    calibration = calibrate(cfg)
    truth = np.asarray(cfg.beta)
    quantile = stats.norm.ppf(0.5 * (1.0 + level))

    def run_one(replicate: int) -> _ReplicateOutcome:
        try:
            data = generate(cfg, calibration, replicate)
            estimates = {}
            for option in fit_options:
                fit_cfg = replace(base, weight=option.weight, seed=rng.derive_seed(cfg.seed, option.label, replicate))
                rcfg = ResampleConfig(R=resamples, seed=fit_cfg.seed)
                result, estimate = fit_with_covariance(data, fit_cfg, rcfg)
                if result.covariance is None:
                    raise RankAftError(estimate.message or "covariance unavailable")
                estimates[option.label] = (result.beta, result.standard_errors(), result.outer_iterations)
            return _ReplicateOutcome(replicate, estimates, data.summary())
        except (RankAftError, np.linalg.LinAlgError) as e:
            logger.warning(f"replicate {replicate} failed: {e}")
            return _ReplicateOutcome(replicate, {}, {}, str(e))

    outcomes = ordered_map(run_one, range(replicates), threads)
    good = [o for o in outcomes if o.error is None]
    failures = replicates - len(good)
    if failures > MAX_FAILURE_RATE * replicates:
        raise StudyAbortedError(f"{failures} of {replicates} replicates failed")
    if not good:
        raise StudyAbortedError("no replicate succeeded")

    rows: List[ParameterRow] = []
    raw = []
    iterations: Dict[str, List[int]] = {}
    for option in fit_options:
        betas = np.vstack([o.estimates[option.label][0] for o in good])
        ses = np.vstack([o.estimates[option.label][1] for o in good])
        iterations[option.label] = [o.estimates[option.label][2] for o in good]
        errors = betas - truth
        covered = np.abs(errors) <= quantile * ses
        for j in range(len(truth)):
            rows.append(ParameterRow(
                fit=option.label,
                parameter=f"beta{j + 1}",
                truth=float(truth[j]),
                bias=float(np.mean(errors[:, j])),
                ese=float(np.std(betas[:, j], ddof=1)) if len(good) > 1 else 0.0,
                ase=float(np.mean(ses[:, j])),
                cp=float(np.mean(covered[:, j])),
                mse=float(np.mean(errors[:, j] ** 2)),
            ))
        if keep_raw:
            for o in good:
                beta, se, _ = o.estimates[option.label]
                record = {'replicate': o.replicate, 'fit': option.label}
                record.update({f"beta{j + 1}": float(beta[j]) for j in range(len(beta))})
                record.update({f"se{j + 1}": float(se[j]) for j in range(len(se))})
                raw.append(record)

    keys = [k for k in good[0].censoring if k.endswith('_fraction')] + ['censored_fraction']
    censoring = {k: float(np.mean([o.censoring[k] for o in good])) for k in dict.fromkeys(keys)}
    calibration_values = {k: v for k, v in asdict(calibration).items() if isinstance(v, float)}

    report = McStudyReport(
        scenario=cfg.to_dict(),
        rows=rows,
        replicates=len(good),
        failures=failures,
        wall_time=time.perf_counter() - started,
        censoring=censoring,
        calibration=calibration_values,
        outer_iterations=iterations,
        raw_estimates=pd.DataFrame(raw) if keep_raw else None,
    )
    logger.info(f"study finished: {len(good)} replicates, {failures} failures, {report.wall_time:.1f}s")
    return report


def gehan_null_rejection_rate(cfg: ScenarioConfig, m: int, replicates: int,
                              level: float = 0.05, threads: int = 1) -> float:
    """Share of two-sample Gehan tests rejecting when both groups share one generator"""
    calibration = calibrate(cfg)
    sample_cfg = replace(cfg, n=max(cfg.n + m, 20))

    def rejects(replicate: int) -> bool:
        data = generate(sample_cfg, calibration, replicate)
        group1 = Dataset(data.observations[:cfg.n])
        group2 = Dataset(data.observations[cfg.n:cfg.n + m])
        return two_sample_test(group1, group2).p_value < level

    return float(np.mean(ordered_map(rejects, range(replicates), threads)))
