"""
Heston MLE v1.0 - Simulate Module
Euler 이산화 / 비중심 카이제곱 정확 전이 샘플링, 정상분포 샘플링, 조건부 모멘트
"""

import csv
import math
from typing import List, Optional, Tuple, Union, TextIO
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.special import gammaln, logsumexp

from core import (
    EstimationConfig, Logger, Scheme, Dismissal,
    VolParams, HestonParams, SamplingGrid, VolSeries, JointSeries,
    DomainError, PathDismissed, require_valid, validate_heston, format_float,
)


# ============================================================================
# RNG Streams
# ============================================================================

def make_rng(seed: int, stream_id: int) -> np.random.Generator:
    """
    (seed, stream_id) 로 키잉된 카운터 기반 Philox 스트림
    궤적마다 독립 스트림 하나
    """
    if seed < 0 or stream_id < 0:
        raise DomainError("seed and stream_id must be non-negative", reason="negative seed")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream_id,))
    return np.random.Generator(np.random.Philox(ss))


# ============================================================================
# Configuration
# ============================================================================

@dataclass(frozen=True)
class PathConfig:
    """경로 생성 설정"""
    scheme: Scheme = Scheme.EXACT
    delta: Optional[float] = None        # Euler 스텝 (None 이면 T / 20)
    horizon: Optional[float] = None      # S (euler_vol_path 단독 사용 시)
    y0: Optional[float] = None           # None 이면 정상분포에서 추출
    dismissal: Dismissal = Dismissal.DISCARD_NEGATIVE
    seed: int = 0
    stream_id: int = 0
    x0: float = 100.0                    # 결합 경로 초기 가격
    annualization: float = 1.0           # A: 분산이 R = A Y 로 주어질 때 가격 확산은 sqrt(R / A)
    zero_noise: bool = False             # 테스트용: G_k = 0

    def __post_init__(self):
        if self.delta is not None and not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta}", reason="delta <= 0")
        if self.horizon is not None and not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}", reason="horizon <= 0")
        if self.y0 is not None and not self.y0 > 0:
            raise DomainError(f"y0 must be positive, got {self.y0}", reason="y0 <= 0")
        if not self.x0 > 0:
            raise DomainError(f"x0 must be positive, got {self.x0}", reason="x0 <= 0")
        if not self.annualization > 0:
            raise DomainError(f"annualization must be positive, got {self.annualization}",
                              reason="A <= 0")

    def with_stream(self, stream_id: int) -> "PathConfig":
        return replace(self, stream_id=stream_id)

    @classmethod
    def from_config(cls, config: EstimationConfig, scheme: Scheme = Scheme.EXACT,
                    stream_id: int = 0) -> "PathConfig":
        return cls(
            scheme=scheme,
            delta=config.euler_delta if scheme == Scheme.EULER else None,
            dismissal=config.dismissal,
            seed=config.seed,
            stream_id=stream_id,
            x0=config.x0,
            annualization=config.annualization,
        )


@dataclass(frozen=True)
class Dismissed:
    """폐기된 Euler 궤적 (처음 0 이하가 된 스텝)"""
    step: int
    value: float


@dataclass(frozen=True)
class TransitionParams:
    """
    시간 t 전이의 비중심 카이제곱 파라미터
    lam = 4 kappa / (gamma2 (1 - e^{-kappa t})), r = 2 zeta - 1, nu = e^{-kappa t}, dof = 4 zeta
    """
    lam: float
    r: float
    nu: float
    dof: float


def transition_params(p: VolParams, t: float) -> TransitionParams:
    require_valid(p)
    if not t > 0:
        raise DomainError(f"transition horizon must be positive, got {t}", reason="t <= 0")
    nu = math.exp(-p.kappa * t)
    lam = 4.0 * p.kappa / (p.gamma2 * -math.expm1(-p.kappa * t))
    zeta = p.zeta
    return TransitionParams(lam, 2.0 * zeta - 1.0, nu, 4.0 * zeta)


# ============================================================================
# Samplers
# ============================================================================

def exact_transition_sample(p: VolParams, y, t: float, rng: np.random.Generator,
                            size=None):
    """
    Y_t | Y_0 = y ~ chi2_nc(4 zeta, lam y nu) / lam
    chi2_nc(k, nc) = chi2(k - 1) + N(sqrt(nc), 1)^2, chi2 는 감마 샘플링
    """
    tp = transition_params(p, t)
    y = np.asarray(y, dtype=float) if np.ndim(y) else float(y)
    if np.any(np.asarray(y) <= 0):
        raise DomainError("initial variance must be positive", reason="y <= 0")
    if size is None and np.ndim(y):
        size = np.shape(y)
    chi = 2.0 * rng.standard_gamma((tp.dof - 1.0) / 2.0, size)
    gauss = rng.standard_normal(size)
    z = gauss + np.sqrt(tp.lam * tp.nu * y)
    return (chi + z * z) / tp.lam


def stationary_sample(p: VolParams, rng: np.random.Generator, size=None):
    """정상분포 Gamma(shape 2 zeta, rate 2 kappa / gamma2)"""
    require_valid(p)
    return rng.gamma(2.0 * p.zeta, p.gamma2 / (2.0 * p.kappa), size)


def conditional_moments(p: VolParams, y: float, t: float) -> Tuple[float, float]:
    """
    m_y   = theta (1 - omega) + omega y
    var_y = gamma2 ((1 - omega) / kappa) (omega y + (1 - omega) theta / 2)
    """
    require_valid(p)
    omega = math.exp(-p.kappa * t)
    one_minus = -math.expm1(-p.kappa * t)
    mean = p.theta * one_minus + omega * y
    var = p.gamma2 * (one_minus / p.kappa) * (omega * y + one_minus * p.theta / 2.0)
    return mean, var


def stationary_moments(p: VolParams) -> Tuple[float, float]:
    """(E Y, E 1/Y) = (theta, 2 kappa / (2 kappa theta - gamma2))"""
    require_valid(p)
    return p.theta, 2.0 * p.kappa / p.feller_margin


def _log_bessel_i(order: float, s: float, tol: float) -> float:
    # I_order(s) = sum_k (s/2)^(2k+order) / (k! Gamma(k+order+1)), 꼬리 합 < tol * 합
    if s == 0.0:
        return 0.0 if order == 0 else -math.inf
    h = math.log(s / 2.0)
    quarter = (s / 2.0) ** 2
    log_tol = math.log(tol)
    terms: List[float] = []
    k = 0
    while True:
        lt = (2 * k + order) * h - gammaln(k + 1) - gammaln(k + order + 1)
        terms.append(lt)
        ratio = quarter / ((k + 1) * (k + order + 1))
        if ratio < 1.0:
            tail = lt + math.log(ratio) - math.log1p(-ratio)
            if tail - logsumexp(terms) < log_tol:
                break
        k += 1
    return float(logsumexp(terms))


def transition_density(p: VolParams, y: float, z: float, t: float, tol: float = 1e-12) -> float:
    """
    전이 밀도 g_t(y, z) (R = lam Y 의 비중심 카이제곱 밀도를 z 로 환산)
    진단용
    """
    if z <= 0:
        return 0.0
    tp = transition_params(p, t)
    x = tp.lam * z
    nc = tp.lam * y * tp.nu
    log_fr = (math.log(0.5) - (x + nc) / 2.0
              + (tp.r / 2.0) * (math.log(x) - math.log(nc))
              + _log_bessel_i(tp.r, math.sqrt(x * nc), tol))
    return tp.lam * math.exp(log_fr)


# ============================================================================
# Paths
# ============================================================================

def _initial_variance(p: VolParams, cfg: PathConfig, rng: np.random.Generator) -> float:
    if cfg.y0 is not None:
        return float(cfg.y0)
    return float(stationary_sample(p, rng))


def _substeps(T: float, delta: float) -> int:
    m = int(round(T / delta))
    if m < 1 or abs(m * delta - T) > 1e-9 * T:
        raise DomainError(f"T/delta = {T / delta} must be a positive integer", reason="T/delta not integer")
    return m


def _euler_path(p: VolParams, y0: float, delta: float, n_steps: int,
                rng: np.random.Generator, cfg: PathConfig) -> Union[np.ndarray, Dismissed]:
    # y_{k+1} = y_k + delta kappa (theta - y_k) + gamma sqrt(y_k) sqrt(delta) G_k
    noise = np.zeros(n_steps) if cfg.zero_noise else rng.standard_normal(n_steps)
    drift = delta * p.kappa
    scale = math.sqrt(p.gamma2) * math.sqrt(delta)
    theta = p.theta

    y = y0
    out = [y0]
    for k, g in enumerate(noise.tolist()):
        y = y + drift * (theta - y) + scale * math.sqrt(y) * g
        if y <= 0.0:
            if cfg.dismissal == Dismissal.DISCARD_NEGATIVE:
                return Dismissed(k + 1, y)
            out.extend([0.0] * (n_steps - k))
            return np.array(out)
        out.append(y)
    return np.array(out)


def euler_vol_path(p: VolParams, cfg: PathConfig) -> Union[np.ndarray, Dismissed]:
    """길이 S / delta + 1 의 Euler 경로 또는 Dismissed"""
    require_valid(p)
    if cfg.delta is None or cfg.horizon is None:
        raise DomainError("Euler path needs delta and horizon", reason="missing delta/horizon")
    n_steps = int(round(cfg.horizon / cfg.delta))
    rng = make_rng(cfg.seed, cfg.stream_id)
    y0 = _initial_variance(p, cfg, rng)
    return _euler_path(p, y0, cfg.delta, n_steps, rng, cfg)


def _exact_chain(v0: float, chi: np.ndarray, gauss: np.ndarray, lam: float, a: float) -> np.ndarray:
    # V_{n+1} = (chi_n + (g_n + sqrt(lam nu V_n))^2) / lam, a = lam nu
    v = v0
    out = [v0]
    for c, g in zip(chi.tolist(), gauss.tolist()):
        z = g + math.sqrt(a * v)
        v = (c + z * z) / lam
        out.append(v)
    return np.array(out)


def subsampled_vol_series(p: VolParams, grid: SamplingGrid, cfg: PathConfig,
                          logger: Optional[Logger] = None) -> VolSeries:
    """
    N + 1 개의 관측 V_n = Y_{nT}
    EXACT: 간격 T 의 정확 전이를 연쇄 (이산화 오차 없음)
    EULER: delta 스텝 경로를 m = T / delta 마다 추출
    """
    require_valid(p)
    rng = make_rng(cfg.seed, cfg.stream_id)
    y0 = _initial_variance(p, cfg, rng)

    if cfg.scheme == Scheme.EXACT:
        tp = transition_params(p, grid.T)
        chi = 2.0 * rng.standard_gamma((tp.dof - 1.0) / 2.0, grid.N)
        gauss = rng.standard_normal(grid.N)
        return VolSeries(grid, _exact_chain(y0, chi, gauss, tp.lam, tp.lam * tp.nu))

    delta = _euler_delta(grid, cfg, logger)
    m = _substeps(grid.T, delta)
    path = _euler_path(p, y0, delta, grid.N * m, rng, cfg)
    if isinstance(path, Dismissed):
        raise PathDismissed(
            f"trajectory {cfg.stream_id} dismissed at step {path.step}", step=path.step
        )
    # AbsorbHalt 경로는 0 에서 멈추므로 관측 시계열로 쓸 수 없음
    absorbed = np.flatnonzero(path <= 0.0)
    if absorbed.size:
        step = int(absorbed[0])
        raise PathDismissed(
            f"trajectory {cfg.stream_id} absorbed at step {step}", step=step
        )
    return VolSeries(grid, path[::m])


def _euler_delta(grid: SamplingGrid, cfg: PathConfig, logger: Optional[Logger]) -> float:
    delta = cfg.delta if cfg.delta is not None else grid.T / 20.0
    if delta > grid.T / 10.0 and logger is not None:
        logger.warning(f"Euler step delta={delta:.3g} exceeds T/10 (T={grid.T:.3g})")
    return delta


def correlated_increments(dB: np.ndarray, dW: np.ndarray, rho: float) -> np.ndarray:
    """dZ = rho dB + sqrt(1 - rho^2) dW"""
    return rho * dB + math.sqrt(1.0 - rho * rho) * dW


def joint_euler_path(hp: HestonParams, grid: SamplingGrid, cfg: PathConfig,
                     logger: Optional[Logger] = None) -> JointSeries:
    """
    결합 Euler 경로
    dX = mu X delta + sqrt(R / A) X dZ, dR = kappa (theta - R) delta + gamma sqrt(R) dB
    R 은 (연율화된) 분산, A = cfg.annualization (A = 1 이면 R = Y)
    분산 또는 가격이 0 이하가 되면 궤적 폐기
    """
    ok, reason = validate_heston(hp)
    if not ok:
        raise DomainError(f"invalid Heston parameters {hp.to_dict()}: {reason}", reason=reason)
    p = hp.vol
    delta = _euler_delta(grid, cfg, logger)
    m = _substeps(grid.T, delta)
    n_steps = grid.N * m

    rng = make_rng(cfg.seed, cfg.stream_id)
    y = _initial_variance(p, cfg, rng)
    x = float(cfg.x0)
    if cfg.zero_noise:
        g_b = np.zeros(n_steps)
        g_w = np.zeros(n_steps)
    else:
        g_b = rng.standard_normal(n_steps)
        g_w = rng.standard_normal(n_steps)
    sd = math.sqrt(delta)
    dB = sd * g_b
    dZ = correlated_increments(dB, sd * g_w, hp.rho)

    gamma = math.sqrt(p.gamma2)
    drift_y = p.kappa * delta
    drift_x = hp.mu * delta
    price_scale = 1.0 / math.sqrt(cfg.annualization)
    values = [y]
    prices = [x]
    for k, (db, dz) in enumerate(zip(dB.tolist(), dZ.tolist()), start=1):
        root = math.sqrt(y)
        y_next = y + drift_y * (p.theta - y) + gamma * root * db
        x = x + drift_x * x + price_scale * root * x * dz
        y = y_next
        if y <= 0.0 or x <= 0.0:
            raise PathDismissed(f"trajectory {cfg.stream_id} dismissed at step {k}", step=k)
        if k % m == 0:
            values.append(y)
            prices.append(x)
    return JointSeries(grid, np.array(values), np.array(prices))


# ============================================================================
# Batches
# ============================================================================

@dataclass
class TrajectoryBatch:
    """궤적 모음 (폐기된 stream_id 별도 기록)"""
    series: List[VolSeries] = field(default_factory=list)
    dismissed: List[int] = field(default_factory=list)

    @property
    def dismissed_fraction(self) -> float:
        total = len(self.series) + len(self.dismissed)
        return len(self.dismissed) / total if total else 0.0


def _simulate_one(p: VolParams, grid: SamplingGrid, cfg: PathConfig) -> Optional[VolSeries]:
    try:
        return subsampled_vol_series(p, grid, cfg)
    except PathDismissed:
        return None


def simulate_batch(p: VolParams, grid: SamplingGrid, cfg: PathConfig, trajectories: int,
                   n_jobs: Optional[int] = None) -> TrajectoryBatch:
    """stream_id = cfg.stream_id + i 인 궤적들 (스레드 수와 무관하게 동일 결과)"""
    configs = [cfg.with_stream(cfg.stream_id + i) for i in range(trajectories)]
    if not n_jobs or n_jobs == 1:
        results = [_simulate_one(p, grid, c) for c in configs]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(_simulate_one)(p, grid, c) for c in configs)
    batch = TrajectoryBatch()
    for c, s in zip(configs, results):
        if s is None:
            batch.dismissed.append(c.stream_id)
        else:
            batch.series.append(s)
    return batch


# ============================================================================
# Path Dump
# ============================================================================

def write_path_csv(series: Union[VolSeries, JointSeries], out: TextIO) -> None:
    """헤더 n,t,V (결합 경로는 U 추가), 17 유효숫자"""
    writer = csv.writer(out, lineterminator="\n")
    joint = isinstance(series, JointSeries)
    writer.writerow(["n", "t", "V", "U"] if joint else ["n", "t", "V"])
    times = series.grid.times()
    for n in range(series.grid.N + 1):
        row = [str(n), format_float(times[n]), format_float(series.values[n])]
        if joint:
            row.append(format_float(series.prices[n]))
        writer.writerow(row)
