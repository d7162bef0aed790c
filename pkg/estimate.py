"""
Heston MLE v1.0 - Estimate Module
닫힌 형태 근사 MLE, 일치(consistent) 추정량, 드리프트/상관 추정 및 점근 편향
"""

import math
from typing import Optional, Tuple, Union, NamedTuple, Dict, Any
from dataclasses import dataclass

import numpy as np

from core import (
    EstimationConfig, Logger, Regime,
    VolParams, CanonicalParams, ConeParams, VolSeries, JointSeries,
    DomainError, SeriesError, BoundaryError, NotInvertible, RootsNotSeparated,
    require_valid,
)
from stats import (
    SufficientStats, GenericityVerdict, DEGENERATE,
    sufficient_stats, check_genericity, check_positive,
)


# ============================================================================
# Data Models
# ============================================================================

class VolEstimates(NamedTuple):
    """원시 MLE (kappa_hat, theta_hat, gamma2_hat)"""
    kappa_hat: float
    theta_hat: float
    gamma2_hat: float

    def to_dict(self) -> Dict[str, Any]:
        return {"available": True, "kappa": self.kappa_hat,
                "theta": self.theta_hat, "gamma2": self.gamma2_hat}


class ConsistentEstimates(NamedTuple):
    """편향 보정 추정량 (K, theta_hat, G)"""
    K: float
    theta_hat: float
    G: float

    def to_dict(self) -> Dict[str, Any]:
        return {"available": True, "kappa": self.K, "theta": self.theta_hat, "gamma2": self.G}


@dataclass(frozen=True)
class BoundaryOutcome:
    """
    Generic 이 아닌 경우의 결과
    stationary: 제약 없는 정류점 (degenerate 이면 None)
    projected: 콘 내부로 epsilon 만큼 당긴 점 (플래그된 값)
    """
    reason: str
    stationary: Optional[ConeParams]
    projected: Optional[ConeParams]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "reason": self.reason,
            "stationary": self.stationary.to_dict() if self.stationary else None,
            "projected": self.projected.to_dict() if self.projected else None,
        }


@dataclass(frozen=True, eq=False)
class Residuals:
    """추정된 브라운 증분 dZ_hat, dB_hat (길이 N)"""
    dZ_hat: np.ndarray
    dB_hat: np.ndarray
    w_hat: float

    @property
    def Q(self) -> np.ndarray:
        """정규화 잔차 sqrt(2w) dB_hat"""
        return math.sqrt(2.0 * self.w_hat) * self.dB_hat


def _unavailable(reason: Optional[str]) -> Dict[str, Any]:
    return {"available": False, "reason": reason}


@dataclass(frozen=True)
class EstimateReport:
    """추정 결과 전체"""
    T: float
    N: int
    stats: SufficientStats
    genericity: GenericityVerdict
    raw: Optional[VolEstimates] = None
    raw_reason: Optional[str] = None
    boundary: Optional[BoundaryOutcome] = None
    consistent: Optional[ConsistentEstimates] = None
    consistent_reason: Optional[str] = None
    canonical_hat: Optional[CanonicalParams] = None
    regime: Optional[Regime] = None
    mu_hat: Optional[float] = None
    mu_reason: Optional[str] = None
    rho_hat: Optional[float] = None
    rho_reason: Optional[str] = None
    rho_at_edge: bool = False
    annualization: float = 1.0

    @property
    def is_generic(self) -> bool:
        return self.genericity.generic

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "T": self.T,
            "N": self.N,
            "annualization": self.annualization,
            "stats": self.stats.to_dict(),
            "genericity": self.genericity.to_dict(),
        }
        if self.raw is not None:
            raw = self.raw.to_dict()
            raw["flagged"] = not self.genericity.generic
            out["raw"] = raw
        else:
            out["raw"] = _unavailable(self.raw_reason)
        if self.boundary is not None:
            out["boundary"] = self.boundary.to_dict()
        out["consistent"] = (self.consistent.to_dict() if self.consistent is not None
                             else _unavailable(self.consistent_reason))
        if self.canonical_hat is not None:
            out["canonical_hat"] = {"available": True, **self.canonical_hat.to_dict()}
        else:
            out["canonical_hat"] = _unavailable(self.consistent_reason)
        out["regime"] = self.regime.value if self.regime else None
        out["mu_hat"] = ({"available": True, "mu_hat": self.mu_hat} if self.mu_hat is not None
                         else _unavailable(self.mu_reason))
        out["rho_hat"] = ({"available": True, "rho_hat": self.rho_hat, "edge": self.rho_at_edge}
                          if self.rho_hat is not None else _unavailable(self.rho_reason))
        return out


# ============================================================================
# Likelihood
# ============================================================================

def _quadratic_part(p: ConeParams, s: SufficientStats) -> float:
    u, v = p.u, p.v
    return (s.a + s.b * u + s.c * v + 0.5 * s.d * u * u
            - 2.0 * u * v + 0.5 * s.f * v * v)


def neg_log_likelihood(p: ConeParams, s: SufficientStats) -> float:
    """L(p) = log(2w) + (1/2w)[a + bu + cv + du^2/2 - 2uv + fv^2/2]"""
    if not p.in_cone():
        raise DomainError(f"point outside cone: {p.to_dict()}", reason="outside cone")
    return math.log(2.0 * p.w) + _quadratic_part(p, s) / (2.0 * p.w)


def nll_gradient(p: ConeParams, s: SufficientStats) -> Tuple[float, float, float]:
    """(dL/du, dL/dv, dL/dw)"""
    two_w = 2.0 * p.w
    du = (s.b + s.d * p.u - 2.0 * p.v) / two_w
    dv = (s.c - 2.0 * p.u + s.f * p.v) / two_w
    dw = 1.0 / p.w - _quadratic_part(p, s) / (2.0 * p.w * p.w)
    return du, dv, dw


def minimize_nll(s: SufficientStats, tol: float = 1e-10, max_iter: int = 10000) -> ConeParams:
    """
    수치 최소화 (닫힌 형태 검증용)
    w 고정 시 (u, v) 에 대해 강볼록 2차식 -> 2x2 선형계 풀이,
    (u, v) 고정 시 w = S(u, v) / 2.
    해가 콘 밖이면 제약 좌표하강으로 대체
    """
    if not s.discriminant > 0:
        raise BoundaryError("degenerate discriminant", reason=DEGENERATE)

    hessian = np.array([[s.d, -2.0], [-2.0, s.f]])
    rhs = np.array([-s.b, -s.c])
    tiny = 1e-300

    u, v = np.linalg.solve(hessian, rhs)
    w = max(_quadratic_part(ConeParams(u, v, 1.0), s) / 2.0, tiny)

    for _ in range(max_iter):
        u_old, v_old, w_old = u, v, w
        u_free, v_free = np.linalg.solve(hessian, rhs)
        if u_free > w and v_free > 0:
            u, v = float(u_free), float(v_free)
        else:
            u = max((2.0 * v - s.b) / s.d, w)
            v = max((2.0 * u - s.c) / s.f, tiny)
        w = min(max(_quadratic_part(ConeParams(u, v, 1.0), s) / 2.0, tiny), u)
        step = max(abs(u - u_old), abs(v - v_old), abs(w - w_old))
        if step <= tol * max(1.0, abs(u), abs(v), abs(w)):
            break
    return ConeParams(float(u), float(v), float(w))


# ============================================================================
# Closed-form MLE
# ============================================================================

def stationary_point(s: SufficientStats) -> ConeParams:
    """
    u* = -(bf + 2c) / (df - 4)
    v* = -(2b + cd) / (df - 4)
    w* = a/2 - (b^2 f + 4bc + c^2 d) / (4 (df - 4))
    """
    disc = s.discriminant
    u = -(s.b * s.f + 2.0 * s.c) / disc
    v = -(2.0 * s.b + s.c * s.d) / disc
    w = s.a / 2.0 - (s.b ** 2 * s.f + 4.0 * s.b * s.c + s.c ** 2 * s.d) / (4.0 * disc)
    return ConeParams(u, v, w)


def _pull_inside(c: ConeParams, eps: float) -> ConeParams:
    # 콘 폐포로 잘라낸 뒤 내부 기준점 (s, s, s/2) 쪽으로 eps 만큼 이동
    scale = max(abs(c.u), abs(c.v), abs(c.w))
    if not scale > 0 or not math.isfinite(scale):
        scale = 1.0
    w = max(c.w, 0.0)
    v = max(c.v, 0.0)
    u = max(c.u, w)
    return ConeParams(
        (1.0 - eps) * u + eps * scale,
        (1.0 - eps) * v + eps * scale,
        (1.0 - eps) * w + eps * scale / 2.0,
    )


def mle_uvw(s: SufficientStats, tol: float = 1e-12,
            pull: float = 1e-6) -> Union[ConeParams, BoundaryOutcome]:
    verdict = check_genericity(s, tol)
    if verdict.reason == DEGENERATE:
        return BoundaryOutcome(DEGENERATE, None, None)
    point = stationary_point(s)
    if verdict.generic:
        return point
    return BoundaryOutcome(verdict.reason, point, _pull_inside(point, pull))


def estimates_from_cone(c: ConeParams, T: float) -> VolEstimates:
    """kappa = v / T, theta = u / v, gamma2 = 2w / T"""
    return VolEstimates(c.v / T, c.u / c.v, 2.0 * c.w / T)


def mle_volatility_params(s: SufficientStats, tol: float = 1e-12) -> VolEstimates:
    """
    kappa_hat  = -(2b + cd) / (T (df - 4))
    theta_hat  = (bf + 2c) / (2b + cd)
    gamma2_hat = a/T - (b^2 f + 4bc + c^2 d) / (2T (df - 4))
    """
    verdict = check_genericity(s, tol)
    if not verdict.generic:
        raise BoundaryError(f"statistics are not generic: {verdict.reason}", reason=verdict.reason)
    disc = s.discriminant
    q = 2.0 * s.b + s.c * s.d
    kappa = -q / (s.T * disc)
    theta = (s.b * s.f + 2.0 * s.c) / q
    gamma2 = s.a / s.T - (s.b ** 2 * s.f + 4.0 * s.b * s.c + s.c ** 2 * s.d) / (2.0 * s.T * disc)
    return VolEstimates(kappa, theta, gamma2)


# ============================================================================
# Asymptotics
# ============================================================================

def asymptotic_limits(p: VolParams, T: float) -> VolEstimates:
    """
    N -> inf 에서의 원시 MLE 극한
    kappa_inf  = (1 - omega) / T
    theta_inf  = theta
    gamma2_inf = ((1 - omega) gamma2 / (kappa T)) [omega + (1 - omega) zeta / (2 zeta - 1)]
    """
    require_valid(p)
    if not T > 0:
        raise DomainError(f"T must be positive, got {T}", reason="T <= 0")
    omega = math.exp(-p.kappa * T)
    one_minus_omega = -math.expm1(-p.kappa * T)
    zeta = p.zeta
    kappa_inf = one_minus_omega / T
    gamma2_inf = (one_minus_omega * p.gamma2 / (p.kappa * T)
                  * (omega + one_minus_omega * zeta / (2.0 * zeta - 1.0)))
    return VolEstimates(kappa_inf, p.theta, gamma2_inf)


def bias_rates(p: VolParams, T: float) -> Tuple[float, float]:
    """작은 T 에서의 1차 상대 편향 (kappa, gamma2)"""
    require_valid(p)
    zeta = p.zeta
    half = p.kappa * T / 2.0
    return -half, half * (3.0 - 4.0 * zeta) / (2.0 * zeta - 1.0)


def asymptotic_genericity(c: CanonicalParams) -> bool:
    """case (i) zeta >= 3/4, case (ii) omega > zeta (3 - 4 zeta) / (1 - zeta)"""
    if c.zeta >= 0.75:
        return True
    return c.omega > c.zeta * (3.0 - 4.0 * c.zeta) / (1.0 - c.zeta)


def max_subsampling_time(p: VolParams) -> float:
    """1/2 < zeta < 3/4 에서 점근 일반성을 유지하는 최대 T (그 외 inf)"""
    require_valid(p)
    zeta = p.zeta
    if zeta >= 0.75:
        return math.inf
    return math.log((1.0 - zeta) / (zeta * (3.0 - 4.0 * zeta))) / p.kappa


# ============================================================================
# Consistent Estimators
# ============================================================================

def consistent_kappa(kappa_hat: float, T: float) -> float:
    """K = -log(1 - T kappa_hat) / T"""
    x = T * kappa_hat
    if not 0.0 < x < 1.0:
        raise NotInvertible(f"T*kappa_hat = {x} outside (0, 1)", reason="T*kappa_hat outside (0,1)")
    return -math.log1p(-x) / T


def pol_roots(raw: VolEstimates, T: float) -> Tuple[float, float]:
    """
    pol(Z) = (1 - T k) Z^2 + [theta (T k - 2) - g / k] Z + 2 g theta / k 의 두 근 (작은 근 먼저)
    """
    k, theta, g = raw
    x = T * k
    qa = 1.0 - x
    if not (0.0 < x < 1.0):
        raise NotInvertible(f"T*kappa_hat = {x} outside (0, 1)", reason="T*kappa_hat outside (0,1)")
    qb = theta * (x - 2.0) - g / k
    qc = 2.0 * g * theta / k
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0.0:
        raise RootsNotSeparated(f"complex roots (discriminant {disc})", reason="complex roots")
    q = -(qb + math.copysign(math.sqrt(disc), qb)) / 2.0
    if q == 0.0:
        raise RootsNotSeparated("double root at zero", reason="degenerate polynomial")
    r1, r2 = q / qa, qc / q
    return (r1, r2) if r1 <= r2 else (r2, r1)


def consistent_gamma2(raw: VolEstimates, T: float) -> float:
    """G = Z1 * K, Z1 은 (0, 2 theta_hat) 안의 작은 근"""
    K = consistent_kappa(raw.kappa_hat, T)
    z1, z2 = pol_roots(raw, T)
    theta2 = 2.0 * raw.theta_hat
    if not (0.0 < z1 < theta2 < z2):
        raise RootsNotSeparated(
            f"root ordering violated: Z1={z1}, 2*theta_hat={theta2}, Z2={z2}",
            reason="roots not separated",
        )
    return z1 * K


def zeta_hat(K: float, theta_hat: float, G: float) -> float:
    if not G > 0:
        raise DomainError(f"G must be positive, got {G}", reason="G <= 0")
    return K * theta_hat / G


def classify_regime(zeta: float) -> Regime:
    return Regime.GAUSSIAN if zeta > 1.0 else Regime.HEAVY_TAIL


# ============================================================================
# Drift & Correlation
# ============================================================================

def drift_mu(series: JointSeries) -> float:
    """mu_hat = sum (1/V_n)(dU_n / U_n) / (T sum 1/V_n)"""
    check_positive(series.values, "variance")
    check_positive(series.prices, "price")
    inv_v = 1.0 / series.values[:-1]
    returns = np.diff(series.prices) / series.prices[:-1]
    return math.fsum(inv_v * returns) / (series.grid.T * math.fsum(inv_v))


def residuals_and_rho(series: JointSeries, mu_hat: float,
                      cone: ConeParams) -> Tuple[Residuals, float]:
    """
    dZ_hat = (dU - T mu U) / (sqrt(T) sqrt(V) U)
    dB_hat = (dV - (u - v V)) / (sqrt(2w) sqrt(V))
    rho_hat = 두 증분의 Pearson 상관
    """
    if not cone.in_cone():
        raise DomainError(f"cone membership violated: {cone.to_dict()}", reason="outside cone")
    check_positive(series.values, "variance")
    check_positive(series.prices, "price")

    T = series.grid.T
    V = series.values[:-1]
    U = series.prices[:-1]
    sqrt_v = np.sqrt(V)
    dZ = (np.diff(series.prices) - T * mu_hat * U) / (math.sqrt(T) * sqrt_v * U)
    dB = (np.diff(series.values) - (cone.u - cone.v * V)) / (math.sqrt(2.0 * cone.w) * sqrt_v)

    if np.std(dZ) == 0.0 or np.std(dB) == 0.0:
        raise SeriesError("zero-variance residual sequence, correlation undefined",
                          reason="zero-variance residuals")
    rho = float(np.corrcoef(dZ, dB)[0, 1])
    rho = min(1.0, max(-1.0, rho))
    return Residuals(dZ, dB, cone.w), rho


# ============================================================================
# Estimator
# ============================================================================

class HestonEstimator:
    """시계열 -> EstimateReport"""

    def __init__(self, config: Optional[EstimationConfig] = None, logger: Optional[Logger] = None):
        self.config = config or EstimationConfig()
        self.logger = logger or Logger.silent()

    def fit(self, series: Union[VolSeries, JointSeries]) -> EstimateReport:
        cfg = self.config
        T = series.grid.T
        N = series.grid.N
        vol = series.vol_series if isinstance(series, JointSeries) else series

        stats = sufficient_stats(vol)
        verdict = check_genericity(stats, cfg.discriminant_tol)
        outcome = mle_uvw(stats, cfg.discriminant_tol, cfg.boundary_pull)

        fields: Dict[str, Any] = {
            "T": T, "N": N, "stats": stats, "genericity": verdict,
            "annualization": cfg.annualization,
        }

        cone: Optional[ConeParams] = None
        if isinstance(outcome, ConeParams):
            cone = outcome
        else:
            fields["boundary"] = outcome
            cone = outcome.projected
            self.logger.warning(f"Boundary case: {outcome.reason}")

        if cone is not None:
            fields["raw"] = estimates_from_cone(cone, T)
        else:
            fields["raw_reason"] = verdict.reason

        if verdict.generic:
            raw = fields["raw"]
            try:
                K = consistent_kappa(raw.kappa_hat, T)
                G = consistent_gamma2(raw, T)
                zeta = zeta_hat(K, raw.theta_hat, G)
                fields["consistent"] = ConsistentEstimates(K, raw.theta_hat, G)
                fields["canonical_hat"] = CanonicalParams(math.exp(-K * T), zeta)
                fields["regime"] = classify_regime(zeta)
            except (NotInvertible, RootsNotSeparated, DomainError) as e:
                fields["consistent_reason"] = e.reason
                self.logger.warning(f"Consistent estimators unavailable: {e}")
        else:
            fields["consistent_reason"] = "non-generic statistics"

        if isinstance(series, JointSeries):
            self._fit_joint(series, cone, fields)

        report = EstimateReport(**fields)
        self._log_report(report)
        return report

    def _fit_joint(self, series: JointSeries, cone: Optional[ConeParams], fields: Dict[str, Any]):
        try:
            mu = drift_mu(series)
            fields["mu_hat"] = mu
        except SeriesError as e:
            fields["mu_reason"] = e.reason
            fields["rho_reason"] = e.reason
            return

        if cone is None:
            fields["rho_reason"] = "volatility parameters unavailable"
            return
        try:
            _, rho = residuals_and_rho(series, mu, cone)
        except (SeriesError, DomainError) as e:
            fields["rho_reason"] = e.reason
            return
        fields["rho_hat"] = rho
        fields["rho_at_edge"] = abs(rho) >= 1.0 - self.config.rho_edge_tol
        if fields["rho_at_edge"]:
            self.logger.warning(f"rho_hat at the edge of [-1, 1]: {rho}")

    def _log_report(self, report: EstimateReport):
        self.logger.info("=" * 60)
        self.logger.info(f"Estimation (T={report.T:.6g}, N={report.N})")
        self.logger.info(f"Genericity: {report.genericity!r}")
        if report.raw is not None:
            k, th, g = report.raw
            self.logger.info(f"Raw: kappa={k:.6g}, theta={th:.6g}, gamma2={g:.6g}")
        if report.consistent is not None:
            self.logger.info(
                f"Consistent: K={report.consistent.K:.6g}, G={report.consistent.G:.6g}, "
                f"zeta_hat={report.canonical_hat.zeta:.4f} ({report.regime.value})"
            )
        if report.mu_hat is not None:
            self.logger.info(f"mu_hat={report.mu_hat:.6g}")
        if report.rho_hat is not None:
            self.logger.info(f"rho_hat={report.rho_hat:.4f}")
        self.logger.info("=" * 60)
        self.logger.log_event("estimate", report.to_dict())


def fit_series(series: Union[VolSeries, JointSeries],
               config: Optional[EstimationConfig] = None) -> EstimateReport:
    return HestonEstimator(config).fit(series)
