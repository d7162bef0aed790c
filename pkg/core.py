"""
Heston MLE v1.0 - Core Module
도메인 타입, 설정, 로거, 파라미터 영역 검증 및 공간/시간 스케일 변환
"""

import os
import sys
import json
import math
from datetime import datetime
from typing import List, Tuple, Optional, Dict, Any, TextIO
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# ============================================================================
# Enums
# ============================================================================

class Scheme(Enum):
    """시뮬레이션 스킴"""
    EULER = "euler"
    EXACT = "exact"


class Dismissal(Enum):
    """Euler 경로가 0 이하로 내려갔을 때의 처리"""
    DISCARD_NEGATIVE = "discard"   # 궤적 전체 폐기 (기본)
    ABSORB_HALT = "absorb"         # 0에서 흡수 후 정지 (진단용)


class Regime(Enum):
    """추정 오차의 점근 분포 유형"""
    GAUSSIAN = "Gaussian"      # zeta > 1
    HEAVY_TAIL = "HeavyTail"   # zeta <= 1


# ============================================================================
# Errors
# ============================================================================

class HestonError(Exception):
    """패키지 공통 예외 (reason 은 기계 판독용 짧은 문자열)"""

    def __init__(self, message: str, reason: Optional[str] = None):
        super().__init__(message)
        self.reason = reason or message


class DomainError(HestonError, ValueError):
    """파라미터 영역 위반"""


class SeriesError(HestonError, ValueError):
    """시계열 값 오류 (index 보고)"""

    def __init__(self, message: str, index: Optional[int] = None, reason: Optional[str] = None):
        super().__init__(message, reason)
        self.index = index


class BoundaryError(HestonError):
    """Generic 이 아닌 충분통계량"""


class NotInvertible(HestonError):
    """T * kappa_hat 이 (0, 1) 밖"""


class RootsNotSeparated(HestonError):
    """pol_N 근 조건 실패"""


class PathDismissed(HestonError):
    """Euler 궤적 폐기"""

    def __init__(self, message: str, step: int):
        super().__init__(message, reason="dismissed")
        self.step = step


class IngestError(HestonError, ValueError):
    """CSV 적재 오류 (line 은 헤더를 1로 센 파일 줄 번호)"""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message, reason=message)
        self.line = line


class AccuracyError(HestonError):
    """정확도 하네스 오류"""


# ============================================================================
# Configuration
# ============================================================================

@dataclass
class EstimationConfig:
    """추정/시뮬레이션 설정 (모든 파라미터)"""

    # Sampling
    dt: float = 1.0 / 252            # 서브샘플링 간격 T
    annualization: float = 1.0       # A (일간 365, 분봉 525600)

    # Estimation
    discriminant_tol: float = 1e-12  # |d*f - 4| 이하면 degenerate
    boundary_pull: float = 1e-6      # 경계 사례 epsilon-내부 투영
    rho_edge_tol: float = 1e-9       # |rho_hat| >= 1 - tol 이면 플래그

    # Simulation
    euler_substeps: int = 20         # delta = T / 20
    euler_warn_ratio: int = 10       # delta > T / 10 이면 경고
    dismissal: Dismissal = Dismissal.DISCARD_NEGATIVE
    seed: int = 0
    x0: float = 100.0                # 결합 경로 초기 가격

    # Monte Carlo
    trajectories: int = 1100
    n_values: List[int] = field(default_factory=lambda: [500, 1000, 2500, 5000, 10000])
    threads: Optional[int] = None    # None 이면 순차 실행
    normality_alpha: float = 0.01
    sqrtn_min_n: int = 1000
    tail_fraction: float = 0.05      # Hill 추정에 쓰는 상위 비율
    tail_min_sample: int = 1000

    # Logging
    log_dir: Optional[str] = "logs"
    log_echo: bool = True

    @property
    def euler_delta(self) -> float:
        return self.dt / self.euler_substeps


# ============================================================================
# Domain Types
# ============================================================================

@dataclass(frozen=True)
class VolParams:
    """변동성 SDE 파라미터 dY = kappa (theta - Y) dt + gamma sqrt(Y) dB"""
    kappa: float
    theta: float
    gamma2: float

    @property
    def feller_margin(self) -> float:
        return 2.0 * self.kappa * self.theta - self.gamma2

    @property
    def zeta(self) -> float:
        return self.kappa * self.theta / self.gamma2

    def to_dict(self) -> Dict[str, float]:
        return {"kappa": self.kappa, "theta": self.theta, "gamma2": self.gamma2}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "VolParams":
        return cls(float(data["kappa"]), float(data["theta"]), float(data["gamma2"]))


@dataclass(frozen=True)
class HestonParams:
    """가격 + 변동성 결합 모델 파라미터"""
    vol: VolParams
    mu: float
    rho: float

    def to_dict(self) -> Dict[str, float]:
        out = self.vol.to_dict()
        out.update({"mu": self.mu, "rho": self.rho})
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HestonParams":
        return cls(VolParams.from_dict(data), float(data["mu"]), float(data["rho"]))


@dataclass(frozen=True)
class CanonicalParams:
    """스케일/시간 불변량 (omega, zeta)"""
    omega: float
    zeta: float

    def __post_init__(self):
        if not (0.0 < self.omega < 1.0):
            raise DomainError(f"omega must lie in (0, 1), got {self.omega}", reason="omega out of range")
        if not self.zeta > 0.5:
            raise DomainError(f"zeta must exceed 1/2, got {self.zeta}", reason="zeta <= 1/2")

    @property
    def tbar(self) -> float:
        """정규 SDE(kappa=1) 에서의 서브샘플링 시간"""
        return -math.log(self.omega)

    def to_dict(self) -> Dict[str, float]:
        return {"omega": self.omega, "zeta": self.zeta}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CanonicalParams":
        return cls(float(data["omega"]), float(data["zeta"]))


@dataclass(frozen=True)
class ConeParams:
    """시간 변환된 SDE 파라미터 (u, v, w)"""
    u: float
    v: float
    w: float

    def in_cone(self) -> bool:
        return self.u > self.w > 0.0 and self.v > 0.0

    def to_dict(self) -> Dict[str, float]:
        return {"u": self.u, "v": self.v, "w": self.w}


@dataclass(frozen=True)
class SamplingGrid:
    """서브샘플링 격자 (간격 T, 관측 수 N)"""
    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0.0:
            raise DomainError(f"sub-sampling interval must be positive, got {self.T}", reason="T <= 0")
        if self.N < 2:
            raise DomainError(f"need N >= 2 observations, got {self.N}", reason="N < 2")

    @property
    def S(self) -> float:
        return self.N * self.T

    def times(self) -> np.ndarray:
        return np.arange(self.N + 1, dtype=float) * self.T

    def to_dict(self) -> Dict[str, float]:
        return {"T": self.T, "N": self.N}


@dataclass(frozen=True, eq=False)
class VolSeries:
    """분산 관측 V_0..V_N (양수 검사는 stats 에서 index 와 함께 수행)"""
    grid: SamplingGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size != self.grid.N + 1:
            raise SeriesError(
                f"expected {self.grid.N + 1} variance values, got {values.size}",
                reason="length mismatch",
            )
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class JointSeries:
    """분산 V_0..V_N 과 가격 U_0..U_N"""
    grid: SamplingGrid
    values: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        prices = np.asarray(self.prices, dtype=float)
        n = self.grid.N + 1
        if values.ndim != 1 or values.size != n or prices.ndim != 1 or prices.size != n:
            raise SeriesError(
                f"expected {n} variance and price values, got {values.size} and {prices.size}",
                reason="length mismatch",
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "prices", prices)

    @property
    def vol_series(self) -> VolSeries:
        return VolSeries(self.grid, self.values)


# ============================================================================
# Domain Operations
# ============================================================================

def validate_domain(p: VolParams) -> Tuple[bool, str]:
    """
    파라미터 영역 검사
    kappa > 0, theta > 0, gamma2 > 0, 2 kappa theta - gamma2 > 0

    Returns:
        (ok, reason)
    """
    if not p.kappa > 0:
        return False, "kappa must be positive"
    if not p.theta > 0:
        return False, "theta must be positive"
    if not p.gamma2 > 0:
        return False, "gamma2 must be positive"
    if not p.feller_margin > 0:
        return False, "Feller condition violated"
    return True, "OK"


def validate_heston(hp: HestonParams) -> Tuple[bool, str]:
    ok, reason = validate_domain(hp.vol)
    if not ok:
        return ok, reason
    if not math.isfinite(hp.mu):
        return False, "mu must be finite"
    if not abs(hp.rho) < 1.0:
        return False, "|rho| must be < 1"
    return True, "OK"


def require_valid(p: VolParams) -> VolParams:
    ok, reason = validate_domain(p)
    if not ok:
        raise DomainError(f"invalid volatility parameters {p.to_dict()}: {reason}", reason=reason)
    return p


def to_canonical(p: VolParams, grid: SamplingGrid) -> Tuple[CanonicalParams, float]:
    """
    정규 파라미터
    omega = exp(-kappa T), zeta = kappa theta / gamma2, Tbar = kappa T
    """
    require_valid(p)
    tbar = p.kappa * grid.T
    return CanonicalParams(math.exp(-tbar), p.zeta), tbar


def canonical_reduction(p: VolParams, grid: SamplingGrid) -> Tuple[VolParams, SamplingGrid]:
    """A = kappa / gamma2, sigma = 1 / kappa 로 정규 SDE (1, zeta, 1) 에 대응"""
    require_valid(p)
    return VolParams(1.0, p.zeta, 1.0), SamplingGrid(p.kappa * grid.T, grid.N)


def _require_factor(x: float, name: str) -> None:
    if not x > 0:
        raise DomainError(f"{name} must be positive, got {x}", reason=f"{name} <= 0")


def rescale_space(p: VolParams, A: float) -> VolParams:
    """R = A Y: (kappa, A theta, A gamma2)"""
    _require_factor(A, "A")
    return VolParams(p.kappa, A * p.theta, A * p.gamma2)


def time_change(p: VolParams, sigma: float) -> VolParams:
    """t -> sigma t 시간 변환 후의 파라미터 (sigma kappa, theta, sigma gamma2)"""
    _require_factor(sigma, "sigma")
    return VolParams(sigma * p.kappa, p.theta, sigma * p.gamma2)


def rescale_time(p: VolParams, sigma: float) -> ConeParams:
    """u = sigma kappa theta, v = sigma kappa, w = sigma gamma2 / 2"""
    _require_factor(sigma, "sigma")
    return ConeParams(sigma * p.kappa * p.theta, sigma * p.kappa, sigma * p.gamma2 / 2.0)


def cone_to_params(c: ConeParams, sigma: float) -> VolParams:
    """kappa = v / sigma, theta = u / v, gamma2 = 2 w / sigma"""
    _require_factor(sigma, "sigma")
    if not c.in_cone():
        raise DomainError(f"cone membership violated: {c.to_dict()}", reason="outside cone")
    return VolParams(c.v / sigma, c.u / c.v, 2.0 * c.w / sigma)


# ============================================================================
# JSON
# ============================================================================

def _json_ready(obj: Any) -> Any:
    # NaN/inf 는 null, numpy 스칼라는 파이썬 타입으로
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, Enum):
        return obj.value
    return obj


def dumps_json(data: Dict[str, Any]) -> str:
    """고정 키 순서, 왕복 가능한 float repr"""
    return json.dumps(_json_ready(data), indent=2, ensure_ascii=False, allow_nan=False)


def format_float(x: float) -> str:
    return format(float(x), ".17g")


# ============================================================================
# Logger
# ============================================================================

class Logger:
    """통합 로거 (표준출력은 결과 전용이므로 콘솔 출력은 stderr)"""

    def __init__(self, name: str = "heston_mle", log_dir: Optional[str] = "logs",
                 echo: bool = True, stream: Optional[TextIO] = None):
        self.name = name
        self.echo = echo
        self.stream = stream
        self.log_file: Optional[str] = None
        self.event_jsonl: Optional[str] = None

        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
            timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            self.log_file = os.path.join(log_dir, f"{name}_{timestamp}.log")
            self.event_jsonl = os.path.join(log_dir, f"{name}_events.jsonl")

    @classmethod
    def from_config(cls, config: EstimationConfig, name: str = "heston_mle") -> "Logger":
        return cls(name, log_dir=config.log_dir, echo=config.log_echo)

    @classmethod
    def silent(cls, name: str = "heston_mle") -> "Logger":
        return cls(name, log_dir=None, echo=False)

    def _write(self, level: str, msg: str, console: bool = True):
        ts = datetime.now().strftime("%Y-%m-%d %H:%M:%S.%f")[:-3]
        line = f"[{ts}] {level:8} | {msg}\n"
        if console and self.echo:
            print(line.strip(), file=self.stream or sys.stderr)
        if self.log_file:
            with open(self.log_file, 'a', encoding='utf-8') as f:
                f.write(line)

    def info(self, msg: str): self._write("INFO", msg)
    def warning(self, msg: str): self._write("WARNING", msg)
    def error(self, msg: str): self._write("ERROR", msg)
    def debug(self, msg: str): self._write("DEBUG", msg, console=False)

    def log_event(self, event: str, data: Dict[str, Any]):
        """결과 요약을 JSONL 로 기록"""
        if not self.event_jsonl:
            return
        with open(self.event_jsonl, 'a', encoding='utf-8') as f:
            f.write(json.dumps({
                'timestamp': datetime.now().isoformat(),
                'event': event,
                'data': data,
            }, ensure_ascii=False, default=str) + '\n')
