"""
Heston MLE v1.0 - Monte Carlo Module
정확도 하네스: 정규화 추정 오차 분포, 상대 RMS 표, sqrt(N) 상수,
일반성 비율, 정규성/꼬리 진단
"""

import csv
import math
from typing import List, Dict, Tuple, Optional, Any, TextIO, Sequence
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy import stats as sps
from sklearn.linear_model import LinearRegression

from core import (
    EstimationConfig, Logger, Scheme,
    VolParams, HestonParams, CanonicalParams, SamplingGrid, VolSeries,
    DomainError, AccuracyError, PathDismissed, HestonError, format_float,
)
from stats import sufficient_stats, check_genericity
from estimate import (
    HestonEstimator, mle_volatility_params, consistent_kappa, consistent_gamma2,
)
from simulate import PathConfig, subsampled_vol_series, joint_euler_path

ESTIMATORS = ("kappa_hat", "K", "theta_hat", "gamma2_hat", "G")
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
JOINT_PARAMS = ("kappa", "theta", "gamma", "rho", "mu")


# ============================================================================
# Data Models
# ============================================================================

@dataclass(frozen=True)
class AccuracySpec:
    """정규 SDE (kappa = gamma = 1, theta = zeta) 하네스 설정"""
    canonical: CanonicalParams
    tbar: Optional[float] = None          # None 이면 -log(omega)
    n_values: Tuple[int, ...] = (500, 1000, 2500, 5000, 10000)
    trajectories: int = 1100
    scheme: Scheme = Scheme.EXACT
    seed: int = 0
    euler_substeps: int = 20
    threads: Optional[int] = None

    def __post_init__(self):
        if self.trajectories < 2:
            raise DomainError("need at least 2 trajectories", reason="trajectories < 2")
        ns = tuple(int(n) for n in self.n_values)
        if not ns or any(n < 2 for n in ns):
            raise DomainError("N values must be >= 2", reason="N < 2")
        if list(ns) != sorted(ns):
            raise DomainError("N values must be sorted ascending", reason="N values unsorted")
        object.__setattr__(self, "n_values", ns)
        if self.tbar is not None and not self.tbar > 0:
            raise DomainError(f"tbar must be positive, got {self.tbar}", reason="tbar <= 0")

    @property
    def T(self) -> float:
        return self.tbar if self.tbar is not None else self.canonical.tbar

    @property
    def truth(self) -> VolParams:
        return VolParams(1.0, self.canonical.zeta, 1.0)


@dataclass(frozen=True)
class AccuracyRow:
    """(추정량, N) 별 통계"""
    estimator: str
    N: int
    sigma: float
    bias: float
    quantiles: Dict[str, float]
    normality_stat: Optional[float]
    generic_fraction: float
    dismissed_fraction: float
    count: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "estimator": self.estimator, "N": self.N, "sigma": self.sigma, "bias": self.bias,
            "quantiles": self.quantiles, "normality_stat": self.normality_stat,
            "generic_fraction": self.generic_fraction,
            "dismissed_fraction": self.dismissed_fraction, "count": self.count,
        }


@dataclass
class AccuracyResult:
    """하네스 결과 (samples 는 궤적 순서의 정규화 오차)"""
    T: float
    truth: VolParams
    n_values: Tuple[int, ...]
    trajectories: int
    scheme: Scheme
    rows: Dict[Tuple[str, int], AccuracyRow] = field(default_factory=dict)
    samples: Dict[Tuple[str, int], np.ndarray] = field(default_factory=dict)
    generic_counts: Dict[int, int] = field(default_factory=dict)
    simulated: int = 0
    dismissed: int = 0

    def row(self, estimator: str, N: int) -> AccuracyRow:
        return self.rows[(estimator, N)]

    def sigma(self, estimator: str, N: int) -> float:
        return self.rows[(estimator, N)].sigma

    def to_dict(self) -> Dict[str, Any]:
        return {
            "T": self.T,
            "truth": self.truth.to_dict(),
            "N_values": list(self.n_values),
            "trajectories": self.trajectories,
            "scheme": self.scheme.value,
            "simulated": self.simulated,
            "dismissed": self.dismissed,
            "rows": [self.rows[(e, n)].to_dict() for e in ESTIMATORS for n in self.n_values],
        }


@dataclass(frozen=True)
class SqrtNFit:
    """sigma(N) ~ C / sqrt(N)"""
    C: float
    residual: float
    n_used: Tuple[int, ...]


@dataclass(frozen=True)
class NormalityResult:
    """Jarque-Bera + Anderson-Darling"""
    n: int
    jb_stat: float
    jb_pvalue: float
    ad_stat: float
    ad_critical: float
    alpha: float

    @property
    def gaussian_compatible(self) -> bool:
        return self.jb_pvalue > self.alpha and self.ad_stat < self.ad_critical

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n, "jarque_bera": self.jb_stat, "jarque_bera_pvalue": self.jb_pvalue,
            "anderson_darling": self.ad_stat, "anderson_darling_critical": self.ad_critical,
            "alpha": self.alpha, "gaussian_compatible": self.gaussian_compatible,
        }


@dataclass(frozen=True)
class TailProbe:
    """Hill 꼬리 지수 (EXPLORATORY, 판정 없음)"""
    index: float
    k: int
    n: int
    N: int
    label: str = "EXPLORATORY"

    def to_dict(self) -> Dict[str, Any]:
        return {"label": self.label, "tail_index": self.index, "k": self.k,
                "sample": self.n, "N": self.N}


@dataclass(frozen=True)
class GenericityTrend:
    fractions: Dict[int, float]
    nondecreasing: bool


@dataclass(frozen=True)
class CrossCheck:
    """Euler 대 정확 전이 RMS 비교 (z-score)"""
    z_scores: Dict[Tuple[str, int], float]
    threshold: float = 3.0

    @property
    def agreed(self) -> bool:
        return all(abs(z) <= self.threshold for z in self.z_scores.values() if math.isfinite(z))


@dataclass
class JointAccuracy:
    """적합된 결합 모델에서의 재추정 RMS 오차"""
    params: HestonParams
    N: int
    T: float
    used: int
    dismissed: int
    boundary: int
    rms: Dict[str, float]
    relative_rms: Dict[str, float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "params": self.params.to_dict(), "N": self.N, "T": self.T,
            "used": self.used, "dismissed": self.dismissed, "boundary": self.boundary,
            "rms": self.rms, "relative_rms": self.relative_rms,
        }


# ============================================================================
# Per-trajectory Workers
# ============================================================================

def _trajectory_errors(p: VolParams, T: float, n_values: Tuple[int, ...],
                       cfg: PathConfig) -> Optional[np.ndarray]:
    """
    궤적 하나의 정규화 오차 (len(n_values), 5), 폐기되면 None
    Boundary 인 N 의 행은 전부 NaN
    """
    grid = SamplingGrid(T, n_values[-1])
    try:
        series = subsampled_vol_series(p, grid, cfg)
    except PathDismissed:
        return None

    errors = np.full((len(n_values), len(ESTIMATORS)), np.nan)
    for i, N in enumerate(n_values):
        sub = VolSeries(SamplingGrid(T, N), series.values[:N + 1])
        stats = sufficient_stats(sub)
        if not check_genericity(stats).generic:
            continue
        raw = mle_volatility_params(stats)
        errors[i, 0] = raw.kappa_hat / p.kappa - 1.0
        errors[i, 2] = raw.theta_hat / p.theta - 1.0
        errors[i, 3] = raw.gamma2_hat / p.gamma2 - 1.0
        try:
            errors[i, 1] = consistent_kappa(raw.kappa_hat, T) / p.kappa - 1.0
            errors[i, 4] = consistent_gamma2(raw, T) / p.gamma2 - 1.0
        except HestonError:
            pass
    return errors


def _joint_trajectory(hp: HestonParams, grid: SamplingGrid, cfg: PathConfig,
                      config: EstimationConfig) -> Tuple[str, Optional[np.ndarray]]:
    try:
        series = joint_euler_path(hp, grid, cfg)
    except PathDismissed:
        return "dismissed", None
    report = HestonEstimator(config).fit(series)
    if not report.is_generic or report.rho_hat is None or report.mu_hat is None:
        return "boundary", None
    k, th, g2 = report.raw
    return "ok", np.array([k, th, math.sqrt(g2), report.rho_hat, report.mu_hat])


def _run_parallel(func, args_list: List[tuple], threads: Optional[int]) -> list:
    # joblib 결과는 입력 순서 유지
    if not threads or threads == 1:
        return [func(*args) for args in args_list]
    return Parallel(n_jobs=threads)(delayed(func)(*args) for args in args_list)


# ============================================================================
# Harness
# ============================================================================

class AccuracyHarness:
    """정확도 하네스"""

    def __init__(self, config: Optional[EstimationConfig] = None, logger: Optional[Logger] = None):
        self.config = config or EstimationConfig()
        self.logger = logger or Logger.silent()

    def run(self, spec: AccuracySpec) -> AccuracyResult:
        if spec.tbar is not None and abs(math.exp(-spec.tbar) - spec.canonical.omega) > 1e-3:
            self.logger.warning(
                f"tbar={spec.tbar} and omega={spec.canonical.omega} disagree; simulating with tbar"
            )
        return self.run_for(spec.truth, spec.T, spec.n_values, spec.trajectories,
                            scheme=spec.scheme, seed=spec.seed,
                            euler_substeps=spec.euler_substeps, threads=spec.threads)

    def run_for(self, p: VolParams, T: float, n_values: Sequence[int], trajectories: int,
                scheme: Scheme = Scheme.EXACT, seed: int = 0, euler_substeps: int = 20,
                threads: Optional[int] = None) -> AccuracyResult:
        """임의의 파라미터 집합에서의 하네스 (오차는 참값으로 정규화)"""
        n_values = tuple(int(n) for n in n_values)
        self.logger.info("=" * 60)
        self.logger.info(
            f"[Accuracy] kappa={p.kappa:.6g} theta={p.theta:.6g} gamma2={p.gamma2:.6g} "
            f"T={T:.6g} scheme={scheme.value}"
        )
        self.logger.info(f"N values     : {list(n_values)}")
        self.logger.info(f"Trajectories : {trajectories}")
        self.logger.info("=" * 60)
        if trajectories < 30:
            self.logger.warning(f"Only {trajectories} trajectories: sampling error is large")

        base = PathConfig(
            scheme=scheme,
            delta=T / euler_substeps if scheme == Scheme.EULER else None,
            dismissal=self.config.dismissal,
            seed=seed,
        )
        args = [(p, T, n_values, base.with_stream(i)) for i in range(trajectories)]
        outcomes = _run_parallel(_trajectory_errors, args, threads)

        result = AccuracyResult(T, p, n_values, trajectories, scheme)
        kept = [o for o in outcomes if o is not None]
        result.dismissed = trajectories - len(kept)
        result.simulated = len(kept)
        if not kept:
            raise AccuracyError("all trajectories dismissed", reason="all dismissed")

        cube = np.stack(kept)  # (trajectories, len(n_values), 5)
        self._calculate_statistics(cube, result)
        if all(result.generic_counts[n] == 0 for n in n_values):
            self.logger.warning("All trajectories are boundary cases: every row is empty")
        self._log_result(result)
        return result

    def _calculate_statistics(self, cube: np.ndarray, result: AccuracyResult):
        simulated = cube.shape[0]
        dismissed_fraction = result.dismissed / result.trajectories
        for i, N in enumerate(result.n_values):
            generic = ~np.isnan(cube[:, i, 0])
            result.generic_counts[N] = int(generic.sum())
            generic_fraction = result.generic_counts[N] / simulated
            if result.generic_counts[N] == 0:
                self.logger.warning(f"N={N}: no generic trajectories")
            for j, name in enumerate(ESTIMATORS):
                sample = cube[:, i, j]
                sample = sample[np.isfinite(sample)]
                result.samples[(name, N)] = sample
                result.rows[(name, N)] = _summarize(
                    name, N, sample, generic_fraction, dismissed_fraction
                )

    def _log_result(self, result: AccuracyResult):
        self.logger.info("=" * 60)
        self.logger.info("ACCURACY RESULTS (relative RMS, %)")
        self.logger.info("=" * 60)
        self.logger.info("N            : " + " ".join(f"{n:>7}" for n in result.n_values))
        for name in ESTIMATORS:
            cells = " ".join(f"{100 * result.sigma(name, n):7.2f}" for n in result.n_values)
            self.logger.info(f"{name:<12} : {cells}")
        fractions = ", ".join(f"{n}:{result.generic_counts[n] / result.simulated:.3f}"
                              for n in result.n_values)
        self.logger.info(f"Generic      : {fractions}")
        self.logger.info(f"Dismissed    : {result.dismissed}/{result.trajectories}")
        self.logger.info("=" * 60)
        self.logger.log_event("accuracy", result.to_dict())

    def run_joint(self, hp: HestonParams, grid: SamplingGrid, trajectories: int,
                  seed: int = 0, threads: Optional[int] = None) -> JointAccuracy:
        """
        적합된 결합 모델을 Euler 로 재시뮬레이션해 (kappa, theta, gamma, rho, mu) RMS 측정
        분산이 연율화되어 있으면 (config.annualization = A) 가격 확산은 sqrt(R / A)
        """
        cfg = PathConfig(scheme=Scheme.EULER, delta=grid.T / self.config.euler_substeps,
                         seed=seed, x0=self.config.x0,
                         annualization=self.config.annualization)
        est_config = EstimationConfig(dt=grid.T, annualization=self.config.annualization,
                                      log_dir=None, log_echo=False)
        args = [(hp, grid, cfg.with_stream(i), est_config) for i in range(trajectories)]
        outcomes = _run_parallel(_joint_trajectory, args, threads)

        rows = [est for status, est in outcomes if status == "ok"]
        dismissed = sum(1 for status, _ in outcomes if status == "dismissed")
        boundary = sum(1 for status, _ in outcomes if status == "boundary")
        if not rows:
            raise AccuracyError("no usable joint trajectories", reason="no usable trajectories")

        truth = np.array([hp.vol.kappa, hp.vol.theta, math.sqrt(hp.vol.gamma2), hp.rho, hp.mu])
        err = np.stack(rows) - truth
        rms = {name: math.sqrt(math.fsum(err[:, j] ** 2) / len(rows))
               for j, name in enumerate(JOINT_PARAMS)}
        relative = {name: (rms[name] / abs(truth[j]) if truth[j] != 0 else math.inf)
                    for j, name in enumerate(JOINT_PARAMS)}
        result = JointAccuracy(hp, grid.N, grid.T, len(rows), dismissed, boundary, rms, relative)

        self.logger.info("=" * 60)
        self.logger.info(f"JOINT MODEL ACCURACY (N={grid.N}, {len(rows)} trajectories)")
        for name in JOINT_PARAMS:
            self.logger.info(f"{name:<6} : RMS {rms[name]:.4g} ({100 * relative[name]:.1f}%)")
        self.logger.info("=" * 60)
        return result


def _summarize(name: str, N: int, sample: np.ndarray, generic_fraction: float,
               dismissed_fraction: float) -> AccuracyRow:
    n = sample.size
    if n == 0:
        return AccuracyRow(name, N, math.nan, math.nan, {}, None,
                           generic_fraction, dismissed_fraction, 0)
    # 궤적 순서와 무관한 보정 합산
    bias = math.fsum(sample) / n
    sigma = math.sqrt(math.fsum(sample * sample) / n)
    qs = np.quantile(sample, QUANTILES)
    quantiles = {f"q{int(round(100 * q)):02d}": float(v) for q, v in zip(QUANTILES, qs)}
    normality = None
    if n >= 100 and np.std(sample) > 0:
        normality = float(sps.jarque_bera(sample).statistic)
    return AccuracyRow(name, N, sigma, bias, quantiles, normality,
                       generic_fraction, dismissed_fraction, n)


def run_accuracy(spec: AccuracySpec, config: Optional[EstimationConfig] = None,
                 logger: Optional[Logger] = None) -> AccuracyResult:
    return AccuracyHarness(config, logger).run(spec)


def run_accuracy_for(p: VolParams, T: float, n_values: Sequence[int], trajectories: int,
                     scheme: Scheme = Scheme.EXACT, seed: int = 0,
                     threads: Optional[int] = None) -> AccuracyResult:
    return AccuracyHarness().run_for(p, T, n_values, trajectories, scheme=scheme,
                                     seed=seed, threads=threads)


def run_joint_accuracy(hp: HestonParams, grid: SamplingGrid, trajectories: int, seed: int = 0,
                       threads: Optional[int] = None, logger: Optional[Logger] = None,
                       annualization: float = 1.0) -> JointAccuracy:
    config = EstimationConfig(dt=grid.T, annualization=annualization,
                              log_dir=None, log_echo=False)
    return AccuracyHarness(config, logger).run_joint(hp, grid, trajectories, seed, threads)


# ============================================================================
# Diagnostics
# ============================================================================

def sqrtn_constants(result: AccuracyResult, min_n: int = 1000) -> Dict[str, SqrtNFit]:
    """N >= min_n 의 sigma(N) 에 C / sqrt(N) 최소제곱 적합"""
    fits: Dict[str, SqrtNFit] = {}
    for name in ESTIMATORS:
        ns = [n for n in result.n_values
              if n >= min_n and math.isfinite(result.sigma(name, n))]
        if len(ns) < 3:
            raise AccuracyError(
                f"need >= 3 N values >= {min_n} for {name}, have {ns}",
                reason="insufficient N coverage",
            )
        x = 1.0 / np.sqrt(np.array(ns, dtype=float))
        y = np.array([result.sigma(name, n) for n in ns])
        model = LinearRegression(fit_intercept=False).fit(x.reshape(-1, 1), y)
        C = float(model.coef_[0])
        residual = float(np.sqrt(np.mean((y - C * x) ** 2)))
        fits[name] = SqrtNFit(C, residual, tuple(ns))
    return fits


def normality_diagnostic(errors: np.ndarray, alpha: float = 0.01) -> NormalityResult:
    """Jarque-Bera (왜도/첨도) + Anderson-Darling, 유의수준 alpha"""
    x = np.asarray(errors, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 100:
        raise AccuracyError(f"need >= 100 samples, got {x.size}", reason="sample too small")
    if not np.std(x) > 0:
        raise AccuracyError("zero-variance sample", reason="degenerate sample")

    jb = sps.jarque_bera(x)
    ad = sps.anderson(x, dist="norm")
    levels = np.asarray(ad.significance_level, dtype=float)
    critical = float(np.asarray(ad.critical_values)[int(np.argmin(np.abs(levels - 100.0 * alpha)))])
    return NormalityResult(int(x.size), float(jb.statistic), float(jb.pvalue),
                           float(ad.statistic), critical, alpha)


def tail_probe(errors: np.ndarray, N: int, fraction: float = 0.05,
               min_sample: int = 1000) -> TailProbe:
    """|오차| 상위 k 개의 Hill 추정"""
    x = np.abs(np.asarray(errors, dtype=float))
    x = x[np.isfinite(x)]
    if x.size < min_sample:
        raise AccuracyError(f"need >= {min_sample} samples for a tail probe, got {x.size}",
                            reason="insufficient tail sample")
    x = np.sort(x)[::-1]
    k = max(10, int(fraction * x.size))
    if k >= x.size or not x[k] > 0:
        raise AccuracyError("insufficient tail sample", reason="insufficient tail sample")
    hill = float(np.mean(np.log(x[:k]) - math.log(x[k])))
    return TailProbe(1.0 / hill, k, int(x.size), N)


def genericity_rate(result: AccuracyResult) -> GenericityTrend:
    """N 별 Generic 비율과 (2 이항 표준오차 이내) 비감소 여부"""
    n = result.simulated
    fractions = {N: result.generic_counts[N] / n for N in result.n_values}
    values = [fractions[N] for N in result.n_values]
    nondecreasing = True
    for f0, f1 in zip(values, values[1:]):
        se = math.sqrt((f0 * (1 - f0) + f1 * (1 - f1)) / n)
        if f1 < f0 - 2.0 * se:
            nondecreasing = False
    return GenericityTrend(fractions, nondecreasing)


def _sigma_se(sample: np.ndarray) -> float:
    # delta method: se(sqrt(m2)) = sd(e^2) / (2 sigma sqrt(n))
    sq = sample * sample
    sigma = math.sqrt(float(np.mean(sq)))
    if sigma == 0.0:
        return 0.0
    return float(np.std(sq)) / (2.0 * sigma * math.sqrt(sample.size))


def scheme_cross_check(spec: AccuracySpec, config: Optional[EstimationConfig] = None,
                       logger: Optional[Logger] = None) -> CrossCheck:
    """Euler (delta = T/20) 대 정확 전이: RMS 차이의 z-score"""
    harness = AccuracyHarness(config, logger)
    exact = harness.run(_with_scheme(spec, Scheme.EXACT))
    euler = harness.run(_with_scheme(spec, Scheme.EULER))
    z_scores: Dict[Tuple[str, int], float] = {}
    for key, row in exact.rows.items():
        a, b = exact.samples[key], euler.samples[key]
        if a.size == 0 or b.size == 0:
            continue
        se = math.hypot(_sigma_se(a), _sigma_se(b))
        diff = row.sigma - euler.rows[key].sigma
        z_scores[key] = diff / se if se > 0 else (0.0 if diff == 0 else math.inf)
    return CrossCheck(z_scores)


def _with_scheme(spec: AccuracySpec, scheme: Scheme) -> AccuracySpec:
    return AccuracySpec(spec.canonical, spec.tbar, spec.n_values, spec.trajectories,
                        scheme, spec.seed, spec.euler_substeps, spec.threads)


# ============================================================================
# Output
# ============================================================================

def write_table_csv(result: AccuracyResult, out: TextIO) -> None:
    """행 = 추정량, 열 = N (상대 RMS)"""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["estimator"] + [str(n) for n in result.n_values])
    for name in ESTIMATORS:
        writer.writerow([name] + [format_float(result.sigma(name, n)) for n in result.n_values])


def write_sqrtn_csv(fits: Dict[str, SqrtNFit], out: TextIO) -> None:
    """sigma(N) ~ C / sqrt(N) 상수 블록 (추정량, C, 잔차, 사용한 N)"""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["estimator", "C", "residual", "N_used"])
    for name in ESTIMATORS:
        fit = fits[name]
        writer.writerow([name, format_float(fit.C), format_float(fit.residual),
                         " ".join(str(n) for n in fit.n_used)])


def write_long_csv(result: AccuracyResult, out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["estimator", "N", "sigma", "bias", "generic_fraction"])
    for name in ESTIMATORS:
        for n in result.n_values:
            row = result.row(name, n)
            writer.writerow([name, str(n), format_float(row.sigma), format_float(row.bias),
                             format_float(row.generic_fraction)])
