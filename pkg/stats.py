"""
Heston MLE v1.0 - Stats Module
충분통계량 (a, b, c, d, f) 계산 및 일반성(genericity) 판정
"""

import math
from typing import List, Optional, Sequence
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from core import (
    VolParams, VolSeries, SeriesError, DomainError, require_valid,
)

DEGENERATE = "degenerate discriminant"


# ============================================================================
# Sufficient Statistics
# ============================================================================

@dataclass(frozen=True)
class SufficientStats:
    """
    이산화 우도를 결정하는 5개 경로 함수
    a = (1/N) sum dV^2 / V_n
    b = -(2/N) sum dV / V_n
    c = (2/N) (V_N - V_0)
    d = (2/N) sum 1 / V_n
    f = (2/N) sum V_n
    (합은 n = 0..N-1, n = 0 이면 N -> inf 극한값)
    """
    a: float
    b: float
    c: float
    d: float
    f: float
    n: int
    T: float

    @property
    def discriminant(self) -> float:
        return self.d * self.f - 4.0

    def to_dict(self) -> dict:
        return {
            "a": self.a, "b": self.b, "c": self.c, "d": self.d, "f": self.f,
            "N": self.n, "T": self.T,
        }


def check_positive(values: np.ndarray, name: str = "variance") -> None:
    bad = np.flatnonzero(~(values > 0))
    if bad.size:
        i = int(bad[0])
        raise SeriesError(
            f"non-positive {name} {values[i]!r} at index {i}",
            index=i, reason=f"non-positive {name}",
        )


def sufficient_stats(series: VolSeries) -> SufficientStats:
    """분산 경로의 충분통계량 (math.fsum 보정 합산)"""
    v = series.values
    N = series.grid.N
    check_positive(v)

    head = v[:-1]
    dv = np.diff(v)

    a = math.fsum(dv * dv / head) / N
    b = -2.0 * math.fsum(dv / head) / N
    c = 2.0 * (v[N] - v[0]) / N
    d = 2.0 * math.fsum(1.0 / head) / N
    f = 2.0 * math.fsum(head) / N
    return SufficientStats(a, b, c, d, f, N, series.grid.T)


def batch_sufficient_stats(series_list: Sequence[VolSeries],
                           n_jobs: Optional[int] = None) -> List[SufficientStats]:
    """여러 시계열 병렬 계산 (입력 순서 유지)"""
    if not n_jobs or n_jobs == 1:
        return [sufficient_stats(s) for s in series_list]
    return Parallel(n_jobs=n_jobs)(delayed(sufficient_stats)(s) for s in series_list)


def asymptotic_stats(p: VolParams, T: float) -> SufficientStats:
    """N -> inf 에서의 충분통계량 극한 (에르고딕 평균)"""
    require_valid(p)
    if not T > 0:
        raise DomainError(f"T must be positive, got {T}", reason="T <= 0")
    one_minus_omega = -math.expm1(-p.kappa * T)
    margin = p.feller_margin
    a = (one_minus_omega * p.gamma2 / p.kappa
         + one_minus_omega ** 2 * p.gamma2 ** 2 / (p.kappa * margin))
    b = -2.0 * one_minus_omega * p.gamma2 / margin
    d = 4.0 * p.kappa / margin
    f = 2.0 * p.theta
    return SufficientStats(a, b, 0.0, d, f, 0, T)


# ============================================================================
# Genericity
# ============================================================================

@dataclass(frozen=True)
class GenericityVerdict:
    """Generic 또는 Boundary(reason)"""
    generic: bool
    reason: Optional[str] = None

    @classmethod
    def ok(cls) -> "GenericityVerdict":
        return cls(True, None)

    @classmethod
    def boundary(cls, reason: str) -> "GenericityVerdict":
        return cls(False, reason)

    def to_dict(self) -> dict:
        return {"generic": self.generic, "reason": self.reason}

    def __repr__(self):
        return "Generic" if self.generic else f"Boundary({self.reason!r})"


def check_genericity(s: SufficientStats, tol: float = 1e-12) -> GenericityVerdict:
    """
    Generic 조건
    2b + cd < 0
    0 < 2a(df - 4) - b^2 f - 4bc - c^2 d < -4(bf + 2c)
    """
    disc = s.discriminant
    if disc <= tol:
        return GenericityVerdict.boundary(DEGENERATE)

    q = 2.0 * s.b + s.c * s.d
    if q == 0.0:
        return GenericityVerdict.boundary("2b+cd = 0")
    if q > 0.0:
        return GenericityVerdict.boundary("2b+cd > 0")

    m = 2.0 * s.a * disc - s.b ** 2 * s.f - 4.0 * s.b * s.c - s.c ** 2 * s.d
    if not m > 0.0:
        return GenericityVerdict.boundary("non-positive gamma2 estimate")
    if not m < -4.0 * (s.b * s.f + 2.0 * s.c):
        return GenericityVerdict.boundary("Feller condition violated by estimates")
    return GenericityVerdict.ok()
