"""
Estimate 테스트
닫힌 형태 MLE, 우도 최소화 검증, 점근 극한/편향, 일치 추정량, 드리프트/상관, 보고서
"""

import math

import numpy as np
import pytest

from core import (
    EstimationConfig, Regime, VolParams, HestonParams, CanonicalParams, ConeParams,
    SamplingGrid, VolSeries, JointSeries, DomainError, SeriesError, BoundaryError,
    NotInvertible, RootsNotSeparated,
)
from stats import SufficientStats, DEGENERATE, sufficient_stats, check_genericity
from estimate import (
    VolEstimates, BoundaryOutcome, HestonEstimator,
    neg_log_likelihood, nll_gradient, minimize_nll, mle_uvw,
    estimates_from_cone, mle_volatility_params, asymptotic_limits, bias_rates,
    asymptotic_genericity, max_subsampling_time, consistent_kappa, pol_roots,
    consistent_gamma2, zeta_hat, classify_regime, drift_mu, residuals_and_rho, fit_series,
)
from simulate import PathConfig, subsampled_vol_series, joint_euler_path

EXAMPLE = SufficientStats(a=1.0, b=-0.5, c=0.0, d=3.0, f=2.0, n=100, T=1.0)
CANONICAL = VolParams(1.0, 3.5, 1.0)
TBAR = -math.log(0.936)
SP500 = HestonParams(VolParams(16.6, 0.017, 0.28 ** 2), mu=0.126, rho=-0.54)


def _canonical_path(N, stream_id=0, seed=0, p=CANONICAL, T=TBAR):
    return subsampled_vol_series(p, SamplingGrid(T, N), PathConfig(seed=seed, stream_id=stream_id))


def _generic_path(N, start=0, seed=0, p=CANONICAL, T=TBAR):
    """start 부터 처음 나오는 Generic 경로"""
    stream = start
    while True:
        series = _canonical_path(N, stream, seed, p, T)
        if check_genericity(sufficient_stats(series)).generic:
            return series
        stream += 1


def test_likelihood_minimum():
    """닫힌 형태 점이 L 의 최소"""
    print("=" * 60)
    print("TEST: Likelihood Minimum")
    print("=" * 60)

    star = ConeParams(0.5, 0.5, 0.4375)
    best = neg_log_likelihood(star, EXAMPLE)
    print(f"  L(p*) = {best:.12f}")

    grid = np.linspace(0.05, 2.0, 40)
    for u in grid:
        for v in grid:
            for w in grid:
                p = ConeParams(float(u), float(v), float(w))
                if p.in_cone():
                    assert neg_log_likelihood(p, EXAMPLE) >= best - 1e-12

    # 경계/무한대로 가면 발산
    assert neg_log_likelihood(ConeParams(0.5, 0.5, 1e-12), EXAMPLE) > 1e3
    assert neg_log_likelihood(ConeParams(5e5, 5e5, 4.375e5), EXAMPLE) > 1e3

    with pytest.raises(DomainError):
        neg_log_likelihood(ConeParams(0.1, 0.5, 0.2), EXAMPLE)

    for g in nll_gradient(star, EXAMPLE):
        assert abs(g) < 1e-8, f"기울기 0 아님: {g}"
    print("✓ 격자 최소 및 기울기 0 확인")


def test_gradient_matches_finite_difference():
    """해석적 기울기 = 중심차분"""
    print("=" * 60)
    print("TEST: Gradient vs Finite Difference")
    print("=" * 60)

    p = ConeParams(1.3, 0.7, 0.4)
    analytic = nll_gradient(p, EXAMPLE)
    for i, name in enumerate("uvw"):
        h = 1e-6
        up = [p.u, p.v, p.w]
        dn = [p.u, p.v, p.w]
        up[i] += h
        dn[i] -= h
        fd = (neg_log_likelihood(ConeParams(*up), EXAMPLE)
              - neg_log_likelihood(ConeParams(*dn), EXAMPLE)) / (2 * h)
        print(f"  d/d{name}: analytic={analytic[i]:.9f}, fd={fd:.9f}")
        assert abs(fd - analytic[i]) < 1e-6 * max(1.0, abs(fd))
    print("✓ 기울기 일치")


def test_mle_uvw_examples():
    """mle_uvw 예시와 경계 사례"""
    print("=" * 60)
    print("TEST: mle_uvw")
    print("=" * 60)

    assert mle_uvw(EXAMPLE) == ConeParams(0.5, 0.5, 0.4375)

    flat = SufficientStats(a=1.0, b=0.0, c=0.0, d=3.0, f=2.0, n=100, T=1.0)
    out = mle_uvw(flat)
    assert isinstance(out, BoundaryOutcome)
    assert out.reason == "2b+cd = 0"
    assert out.stationary.u == 0.0 and out.stationary.v == 0.0
    assert out.projected.in_cone(), f"투영점이 콘 밖: {out.projected}"

    degenerate = SufficientStats(a=1.0, b=-0.5, c=0.0, d=2.0, f=2.0, n=100, T=1.0)
    out = mle_uvw(degenerate)
    assert isinstance(out, BoundaryOutcome)
    assert out.reason == DEGENERATE and out.stationary is None and out.projected is None
    print("✓ Generic/Boundary/Degenerate 결과 정상")


def test_closed_form_matches_numerical():
    """100 개 Generic 통계량: 닫힌 형태 = 수치 최소화 (상대 1e-6)"""
    print("=" * 60)
    print("TEST: Closed Form vs Numerical Minimization")
    print("=" * 60)

    checked = 0
    stream = 0
    while checked < 100:
        s = sufficient_stats(_canonical_path(500, stream_id=stream, seed=17))
        stream += 1
        if not check_genericity(s).generic:
            continue
        closed = mle_uvw(s)
        numeric = minimize_nll(s)
        assert closed.in_cone()
        for x, y in zip((closed.u, closed.v, closed.w), (numeric.u, numeric.v, numeric.w)):
            assert math.isclose(x, y, rel_tol=1e-6), f"{closed} != {numeric}"
        assert max(abs(g) for g in nll_gradient(closed, s)) < 1e-6
        checked += 1
    print(f"✓ {checked} 개 일치 ({stream} 경로 중)")


def test_mle_volatility_params_examples():
    """kappa_hat, theta_hat, gamma2_hat 예시"""
    print("=" * 60)
    print("TEST: mle_volatility_params")
    print("=" * 60)

    assert mle_volatility_params(EXAMPLE) == (0.5, 1.0, 0.875)
    half = SufficientStats(**{**EXAMPLE.__dict__, "T": 0.5})
    assert mle_volatility_params(half) == (1.0, 1.0, 1.75)

    s = sufficient_stats(_generic_path(2000, start=3))
    direct = mle_volatility_params(s)
    via_cone = estimates_from_cone(mle_uvw(s), s.T)
    for x, y in zip(direct, via_cone):
        assert math.isclose(x, y, rel_tol=1e-12)

    with pytest.raises(BoundaryError):
        mle_volatility_params(SufficientStats(a=1.0, b=0.0, c=0.0, d=3.0, f=2.0, n=100, T=1.0))
    print("✓ 예시 일치")


def test_asymptotic_limits_example():
    """정규 zeta = 3.5, omega = 0.936 의 극한"""
    print("=" * 60)
    print("TEST: Asymptotic Limits")
    print("=" * 60)

    lim = asymptotic_limits(CANONICAL, 0.06614)
    print(f"  kappa_inf={lim.kappa_hat:.5f}, theta_inf={lim.theta_hat}, gamma2_inf={lim.gamma2_hat:.5f}")
    assert abs(lim.kappa_hat - 0.9676) < 2e-4
    assert lim.theta_hat == 3.5
    assert abs(lim.gamma2_hat - 0.9418) < 2e-4
    print("✓ 극한 일치")


def test_bias_rates():
    """작은 T 에서 (kappa_inf/kappa - 1) ~ -kappa T / 2"""
    print("=" * 60)
    print("TEST: Bias Rates")
    print("=" * 60)

    p = VolParams(2.0, 1.5, 1.0)   # zeta = 3
    for T in (1e-2, 1e-3, 1e-4):
        x = p.kappa * T
        lim = asymptotic_limits(p, T)
        rate_k, rate_g = bias_rates(p, T)
        ratio_k = (lim.kappa_hat / p.kappa - 1.0) / rate_k
        ratio_g = (lim.gamma2_hat / p.gamma2 - 1.0) / rate_g
        print(f"  T={T:g}: kappa ratio={ratio_k:.6f}, gamma2 ratio={ratio_g:.6f}")
        assert rate_k < 0
        assert abs(ratio_k - 1.0) < x
        assert abs(ratio_g - 1.0) < x

    assert bias_rates(VolParams(1.0, 0.75, 1.0), 0.01)[1] == 0.0
    print("✓ 1차 편향률 일치")


def test_asymptotic_genericity():
    """case (i) zeta >= 3/4, case (ii) omega 임계값 (엄격 부등호)"""
    print("=" * 60)
    print("TEST: Asymptotic Genericity")
    print("=" * 60)

    for omega in (0.01, 0.5, 0.936, 0.999):
        assert asymptotic_genericity(CanonicalParams(omega, 3.5))
    assert not asymptotic_genericity(CanonicalParams(0.9, 0.6))
    assert asymptotic_genericity(CanonicalParams(0.95, 0.6))

    p = VolParams(1.0, 0.6, 1.0)
    t_max = max_subsampling_time(p)
    print(f"  zeta=0.6: T_max={t_max:.5f}")
    assert math.isclose(t_max, math.log(0.4 / 0.36), rel_tol=1e-12)
    assert asymptotic_genericity(CanonicalParams(math.exp(-0.9 * t_max), 0.6))
    assert not asymptotic_genericity(CanonicalParams(math.exp(-1.1 * t_max), 0.6))
    assert max_subsampling_time(VolParams(1.0, 0.8, 1.0)) == math.inf
    print("✓ 일반성 영역 정상")


def test_consistent_kappa():
    """K = -log(1 - T kappa_hat) / T"""
    print("=" * 60)
    print("TEST: Consistent Kappa")
    print("=" * 60)

    K = consistent_kappa(5.0, 0.1)
    assert math.isclose(K, math.log(2.0) / 0.1, rel_tol=1e-12)
    assert math.isclose(math.exp(-K * 0.1), 0.5, rel_tol=1e-12)

    kappa_hat = (1.0 - 0.936) / 0.06614
    assert math.isclose(consistent_kappa(kappa_hat, 0.06614), -math.log(0.936) / 0.06614,
                        rel_tol=1e-12)

    small = 1e-8
    assert math.isclose(consistent_kappa(small, 1.0), small, rel_tol=1e-7)

    for bad in (10.0, 20.0, 0.0, -1.0):
        with pytest.raises(NotInvertible):
            consistent_kappa(bad, 0.1)
    print("✓ K 역변환 정상")


def test_consistent_gamma2_round_trip():
    """극한값에서 (K, G) 가 참값을 회복"""
    print("=" * 60)
    print("TEST: Consistent Gamma2 Round Trip")
    print("=" * 60)

    for theta in (3.5, 1.1):
        p = VolParams(1.0, theta, 1.0)
        raw = asymptotic_limits(p, 0.06614)
        G = consistent_gamma2(raw, 0.06614)
        print(f"  zeta={theta}: G={G:.12f}")
        assert abs(G - 1.0) < 1e-9
        z1, z2 = pol_roots(raw, 0.06614)
        assert z1 < 2.0 * raw.theta_hat < z2

    rng = np.random.default_rng(99)
    tested = 0
    while tested < 1000:
        kappa = float(np.exp(rng.uniform(-2, 2)))
        gamma2 = float(np.exp(rng.uniform(-3, 3)))
        zeta = float(rng.uniform(0.55, 5.0))
        T = float(np.exp(rng.uniform(math.log(1e-3), 0.0))) / kappa
        p = VolParams(kappa, zeta * gamma2 / kappa, gamma2)
        if not asymptotic_genericity(CanonicalParams(math.exp(-kappa * T), p.zeta)):
            continue
        raw = asymptotic_limits(p, T)
        K = consistent_kappa(raw.kappa_hat, T)
        G = consistent_gamma2(raw, T)
        assert math.isclose(K, kappa, rel_tol=1e-9), f"K={K}, kappa={kappa}"
        assert math.isclose(G, gamma2, rel_tol=1e-9), f"G={G}, gamma2={gamma2}"
        tested += 1
    print(f"✓ {tested} 개 무작위 파라미터 회복")


def test_roots_not_separated():
    """음의 gamma2_hat -> 작은 근이 음수 -> RootsNotSeparated"""
    print("=" * 60)
    print("TEST: Roots Not Separated")
    print("=" * 60)

    with pytest.raises(RootsNotSeparated):
        consistent_gamma2(VolEstimates(1.0, 3.5, -0.5), 0.0659)
    with pytest.raises(NotInvertible):
        consistent_gamma2(VolEstimates(20.0, 3.5, 1.0), 0.0659)
    print("✓ 오류 경로 정상")


def test_zeta_hat_and_regime():
    """zeta_hat = K theta_hat / G"""
    print("=" * 60)
    print("TEST: zeta_hat / Regime")
    print("=" * 60)

    assert zeta_hat(1.0, 3.5, 1.0) == 3.5
    assert classify_regime(3.5) == Regime.GAUSSIAN
    assert zeta_hat(1.0, 0.9, 1.0) == 0.9
    assert classify_regime(0.9) == Regime.HEAVY_TAIL
    assert classify_regime(1.0) == Regime.HEAVY_TAIL
    with pytest.raises(DomainError):
        zeta_hat(1.0, 3.5, 0.0)
    print("✓ 분류 정상")


def test_drift_examples():
    """U_n = (1 + g)^n 이면 mu_hat = g, U 상수면 0"""
    print("=" * 60)
    print("TEST: Drift Examples")
    print("=" * 60)

    N = 100
    grid = SamplingGrid(1.0, N)
    V = np.full(N + 1, 0.04)
    growth = JointSeries(grid, V, 100.0 * 1.01 ** np.arange(N + 1))
    assert abs(drift_mu(growth) - 0.01) < 1e-12

    flat = JointSeries(grid, V, np.full(N + 1, 100.0))
    assert drift_mu(flat) == 0.0

    with pytest.raises(SeriesError):
        drift_mu(JointSeries(grid, V, np.concatenate([[100.0, -1.0], np.full(N - 1, 100.0)])))
    print("✓ 드리프트 예시 정상")


def test_rho_exact_one():
    """dZ_hat = dB_hat 가 되도록 만든 경로 -> rho_hat = 1"""
    print("=" * 60)
    print("TEST: rho_hat = 1 Construction")
    print("=" * 60)

    series = _canonical_path(500, stream_id=7)
    V = series.values
    T = series.grid.T
    v, w = 1.0, 2.0
    head = V[:-1]
    dV = np.diff(V)
    # sum dB_hat / sqrt(V) = 0 이 되도록 u 선택 -> mu_hat 이 생성 드리프트와 일치
    u = math.fsum(dV / head + v) / math.fsum(1.0 / head)
    cone = ConeParams(u, v, w)
    assert cone.in_cone(), f"콘 밖: {cone}"

    dB = (dV - (u - v * head)) / (math.sqrt(2.0 * w) * np.sqrt(head))
    mu = 0.1
    returns = T * mu + math.sqrt(T) * np.sqrt(head) * dB
    assert np.all(returns > -1.0)
    prices = 100.0 * np.concatenate([[1.0], np.cumprod(1.0 + returns)])
    joint = JointSeries(series.grid, V, prices)

    mu_hat = drift_mu(joint)
    assert abs(mu_hat - mu) < 1e-9
    residuals, rho = residuals_and_rho(joint, mu_hat, cone)
    print(f"  rho_hat = {rho!r}")
    assert rho > 1.0 - 1e-9 and rho <= 1.0
    assert np.allclose(residuals.dZ_hat, residuals.dB_hat, atol=1e-6)

    constant = JointSeries(SamplingGrid(1.0, 10), np.full(11, 0.04), np.full(11, 100.0))
    with pytest.raises(SeriesError):
        residuals_and_rho(constant, 0.0, cone)
    print("✓ rho_hat = 1")


def test_joint_simulation_rho_mu():
    """결합 시뮬레이션 (N = 10^4): rho = 0, -0.54 회복, mu 는 4 표준오차 이내"""
    print("=" * 60)
    print("TEST: Joint Simulation rho / mu")
    print("=" * 60)

    grid = SamplingGrid(1.0 / 252, 10000)
    estimator = HestonEstimator(EstimationConfig(log_dir=None, log_echo=False))

    independent = HestonParams(SP500.vol, SP500.mu, 0.0)
    report = estimator.fit(joint_euler_path(independent, grid, PathConfig(seed=5, stream_id=0)))
    print(f"  rho=0     -> rho_hat={report.rho_hat:.4f}")
    assert abs(report.rho_hat) < 4.0 / math.sqrt(grid.N)

    series = joint_euler_path(SP500, grid, PathConfig(seed=5, stream_id=1))
    report = estimator.fit(series)
    se_mu = 1.0 / math.sqrt(grid.T * math.fsum(1.0 / series.values[:-1]))
    print(f"  rho=-0.54 -> rho_hat={report.rho_hat:.4f}, mu_hat={report.mu_hat:.4f} (se {se_mu:.4f})")
    assert abs(report.rho_hat + 0.54) < 0.05
    assert abs(report.mu_hat - SP500.mu) < 4.0 * se_mu
    assert not report.rho_at_edge
    print("✓ 결합 추정 정상")


def test_scale_time_invariance():
    """(A V, T / sigma) 의 정규화 오차 = (V, T) 의 정규화 오차"""
    print("=" * 60)
    print("TEST: Space / Time Invariance of Normalized Errors")
    print("=" * 60)

    p = VolParams(2.0, 0.3, 0.25)
    T = 0.05
    for stream in range(5):
        series = _generic_path(1000, start=100 * stream, p=p, T=T)
        base_raw = mle_volatility_params(sufficient_stats(series))
        base = _normalized(base_raw, p, T)
        for A in (0.01, 365.0, 525600.0):
            for sigma in (0.5, 2.0):
                q = VolParams(sigma * p.kappa, A * p.theta, A * sigma * p.gamma2)
                scaled = VolSeries(SamplingGrid(T / sigma, series.grid.N), A * series.values)
                raw = mle_volatility_params(sufficient_stats(scaled))
                other = _normalized(raw, q, T / sigma)
                assert np.allclose(other, base, rtol=0.0, atol=1e-11), f"A={A}, sigma={sigma}"
    print("✓ 정규화 오차 불변")


def _normalized(raw, p, T):
    return np.array([
        raw.kappa_hat / p.kappa - 1.0,
        consistent_kappa(raw.kappa_hat, T) / p.kappa - 1.0,
        raw.theta_hat / p.theta - 1.0,
        raw.gamma2_hat / p.gamma2 - 1.0,
        consistent_gamma2(raw, T) / p.gamma2 - 1.0,
    ])


def test_long_run_bias():
    """긴 정확 전이 궤적: 원시 MLE 가 편향된 극한으로 수렴"""
    print("=" * 60)
    print("TEST: Long-run Bias (N = 2e6)")
    print("=" * 60)

    series = _canonical_path(2_000_000, stream_id=0, seed=2024)
    raw = mle_volatility_params(sufficient_stats(series))
    lim = asymptotic_limits(CANONICAL, TBAR)
    print(f"  kappa_hat={raw.kappa_hat:.4f} (limit {lim.kappa_hat:.4f})")
    print(f"  theta_hat={raw.theta_hat:.4f} (limit {lim.theta_hat:.4f})")
    print(f"  gamma2_hat={raw.gamma2_hat:.4f} (limit {lim.gamma2_hat:.4f})")
    for got, want in zip(raw, lim):
        assert abs(got / want - 1.0) < 0.02, f"{got} vs {want}"
    print("✓ 극한 2% 이내")


def test_estimator_reports():
    """HestonEstimator 보고서: Generic, Boundary, Degenerate"""
    print("=" * 60)
    print("TEST: Estimator Reports")
    print("=" * 60)

    report = fit_series(_generic_path(5000, start=11))
    data = report.to_dict()
    assert report.is_generic
    assert data["raw"]["available"] and not data["raw"]["flagged"]
    assert data["consistent"]["available"]
    assert data["regime"] == "Gaussian"
    assert data["mu_hat"] == {"available": False, "reason": None}
    assert abs(report.consistent.K - 1.0) < 0.4

    boundary = fit_series(VolSeries(SamplingGrid(1.0, 2), np.array([1.0, 2.0, 1.0])))
    data = boundary.to_dict()
    assert not data["genericity"]["generic"]
    assert data["raw"]["flagged"]
    assert data["boundary"]["reason"] == "non-positive gamma2 estimate"
    assert data["consistent"] == {"available": False, "reason": "non-generic statistics"}

    flat = fit_series(VolSeries(SamplingGrid(1.0, 10), np.full(11, 2.0)))
    data = flat.to_dict()
    assert data["raw"] == {"available": False, "reason": DEGENERATE}

    joint = JointSeries(SamplingGrid(1.0 / 252, 300), *_joint_arrays())
    config = EstimationConfig(log_dir=None, log_echo=False, rho_edge_tol=1.0)
    report = HestonEstimator(config).fit(joint)
    assert report.mu_hat is not None and report.rho_hat is not None
    assert report.rho_at_edge, "허용오차 1 이면 항상 플래그"
    data = report.to_dict()
    assert data["mu_hat"]["mu_hat"] == report.mu_hat
    assert data["rho_hat"]["rho_hat"] == report.rho_hat and bool(data["rho_hat"]["edge"])

    with pytest.raises(SeriesError):
        fit_series(VolSeries(SamplingGrid(1.0, 3), np.array([1.0, 2.0, -1.0, 1.0])))
    print("✓ 보고서 구조 정상")


def _joint_arrays():
    series = joint_euler_path(SP500, SamplingGrid(1.0 / 252, 300), PathConfig(seed=1, stream_id=3))
    return series.values, series.prices


if __name__ == "__main__":
    import traceback

    print("\n" + "🧪" * 30)
    print("ESTIMATE TEST SUITE")
    print("🧪" * 30 + "\n")

    success = True
    tests = [
        test_likelihood_minimum, test_gradient_matches_finite_difference, test_mle_uvw_examples,
        test_closed_form_matches_numerical, test_mle_volatility_params_examples,
        test_asymptotic_limits_example, test_bias_rates, test_asymptotic_genericity,
        test_consistent_kappa, test_consistent_gamma2_round_trip, test_roots_not_separated,
        test_zeta_hat_and_regime, test_drift_examples, test_rho_exact_one,
        test_joint_simulation_rho_mu, test_scale_time_invariance, test_long_run_bias,
        test_estimator_reports,
    ]
    for test in tests:
        try:
            test()
        except AssertionError as e:
            success = False
            print(f"\n❌ {test.__name__} 실패: {e}")
            traceback.print_exc()
        print()

    print("=" * 60)
    print("✅ ALL TESTS PASSED!" if success else "❌ SOME TESTS FAILED")
    print("=" * 60)
