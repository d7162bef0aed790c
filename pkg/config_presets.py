"""
Heston MLE v1.0 - 설정 프리셋
기준 적합값과 데스크 규모 하네스 설정
"""

from core import EstimationConfig, Scheme, VolParams, HestonParams

# ============================================================================
# 기준 정규 파라미터 (정확도 표)
# ============================================================================

REFERENCE_OMEGA = 0.936
REFERENCE_TBAR = 0.0659
REFERENCE_N_VALUES = [500, 1000, 2500, 5000, 10000]
CANONICAL_ZETAS = [1.1, 1.5, 2.5, 3.5]

# 상대 RMS (추정량 -> N 순서대로), 1100 궤적 기준
REFERENCE_RMS = {
    3.5: {
        "kappa_hat": [0.26, 0.18, 0.11, 0.08, 0.06],
        "K": [0.29, 0.20, 0.12, 0.08, 0.06],
        "theta_hat": [0.09, 0.07, 0.04, 0.03, 0.02],
        "gamma2_hat": [0.09, 0.07, 0.06, 0.06, 0.06],
        "G": [0.07, 0.05, 0.03, 0.02, 0.02],
    },
    1.5: {
        "kappa_hat": [0.28, 0.18, 0.11, 0.08, 0.06],
        "K": [0.32, 0.20, 0.12, 0.08, 0.06],
        "theta_hat": [0.15, 0.10, 0.06, 0.04, 0.03],
        "gamma2_hat": [0.08, 0.06, 0.05, 0.05, 0.05],
        "G": [0.07, 0.05, 0.03, 0.02, 0.01],
    },
}

# sigma(N) ~ C / sqrt(N) 상수 (zeta -> 추정량 -> C)
REFERENCE_SQRTN = {
    1.1: {"K": 6.5, "theta_hat": 3.7, "G": 1.65},
    1.5: {"K": 6.0, "theta_hat": 3.2, "G": 1.55},
    2.5: {"K": 5.7, "theta_hat": 2.5, "G": 1.5},
    3.5: {"K": 5.7, "theta_hat": 2.1, "G": 1.5},
}

# ============================================================================
# 시장 데이터 기준 적합값 (원자료 없이는 재현 불가, 문서용)
# ============================================================================

# S&P 500 / VIX 일간, N = 252, T = 1/252
SP500_DAILY_FIT = HestonParams(
    vol=VolParams(kappa=16.6, theta=0.017, gamma2=0.28 ** 2),
    mu=0.126,
    rho=-0.54,
)
SP500_DAILY_RMS = {"kappa": 5.7, "theta": 0.002, "gamma": 0.01, "rho": 0.06}

# 분봉 (Garman-Klass), N = 510, T = 1 분
INTRADAY_MINUTE_FIT = HestonParams(
    vol=VolParams(kappa=0.48, theta=3.15, gamma2=0.80 ** 2),
    mu=3e-5,
    rho=-0.04,
)
INTRADAY_MINUTE_RMS = {"kappa": 0.10, "theta": 0.11, "gamma": 0.14, "rho": 0.04, "mu": 8e-5}

# ============================================================================
# 설정 프리셋
# ============================================================================

# 표 재현 (1100 궤적, 정확 전이)
config_reference_tables = EstimationConfig(
    trajectories=1100,
    n_values=list(REFERENCE_N_VALUES),
    euler_substeps=20,          # 교차검증용 delta = T/20
)

# 데스크 규모 (300 궤적, 허용오차 확대)
config_desk_scale = EstimationConfig(
    trajectories=300,
    n_values=list(REFERENCE_N_VALUES),
)

# 일간 지수 데이터
config_sp500_daily = EstimationConfig(
    dt=1.0 / 252,
    annualization=365.0,        # A = 365
    trajectories=5000,          # 적합 모델 재시뮬레이션 궤적 수
)

# 분봉 데이터 (시간 단위 = 분)
config_intraday_minute = EstimationConfig(
    dt=1.0,
    annualization=525600.0,     # A = 60 * 24 * 365
    trajectories=5000,
)

PRESETS = {
    "reference-tables": config_reference_tables,
    "desk-scale": config_desk_scale,
    "sp500-daily": config_sp500_daily,
    "intraday-minute": config_intraday_minute,
}

DEFAULT_ACCURACY_SCHEME = Scheme.EXACT
