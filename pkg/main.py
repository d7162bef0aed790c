"""
Heston MLE v1.0 - Main Entry Point
CLI 인터페이스 (fit | simulate | accuracy)
"""

import io
import os
import sys
import math
import argparse
from dataclasses import replace
from typing import Optional, List, Dict, Any

from core import (
    EstimationConfig, Logger, Scheme, HestonError, PathDismissed, DomainError,
    VolParams, HestonParams, CanonicalParams, SamplingGrid,
    require_valid, validate_heston, dumps_json, format_float,
)
from config_presets import (
    PRESETS, REFERENCE_OMEGA, REFERENCE_TBAR, REFERENCE_N_VALUES, DEFAULT_ACCURACY_SCHEME,
)
from estimate import HestonEstimator
from ingest import MarketDataLoader, CsvSchema
from simulate import PathConfig, subsampled_vol_series, joint_euler_path, write_path_csv
from montecarlo import (
    ESTIMATORS, AccuracyHarness, AccuracySpec,
    sqrtn_constants, normality_diagnostic, tail_probe, genericity_rate,
    write_table_csv, write_sqrtn_csv, write_long_csv,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_IO = 3
EXIT_DISMISSED = 4


def print_banner():
    """배너 출력 (stdout 은 결과 전용)"""
    banner = """
    ╔═══════════════════════════════════════════════════════════╗
    ║          Heston MLE v1.0                                  ║
    ║          Closed-form volatility estimation & accuracy     ║
    ╚═══════════════════════════════════════════════════════════╝
    """
    print(banner, file=sys.stderr)


def _emit(text: str, path: Optional[str]):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _flatten(data: Dict[str, Any], prefix: str = "") -> List[List[str]]:
    rows: List[List[str]] = []
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            rows.extend(_flatten(value, name + "."))
        elif isinstance(value, float):
            rows.append([name, format_float(value)])
        else:
            rows.append([name, "" if value is None else str(value)])
    return rows


def _threads(args) -> Optional[int]:
    if args.threads is not None:
        return args.threads
    env = os.getenv("HESTON_MLE_THREADS")
    return int(env) if env else None


def mode_fit(args, config: EstimationConfig, logger: Logger) -> int:
    """추정 모드"""
    if not args.input:
        raise DomainError("fit needs an input CSV path", reason="missing input")
    schema = CsvSchema(time_col=args.time_col, price_col=args.price_col,
                       var_col=args.var_col, delimiter=args.delimiter)
    loader = MarketDataLoader(schema, logger)
    series = loader.build(args.input, config.dt, ohlc=args.ohlc, raw_gk=args.raw_gk,
                          annualization=config.annualization)

    report = HestonEstimator(config, logger).fit(series)
    out = report.to_dict()

    if args.accuracy_trajectories:
        out["accuracy"] = _fit_accuracy(report, series.grid, args, config, logger)

    if args.format == "csv":
        buf = io.StringIO()
        buf.write("field,value\n")
        for name, value in _flatten(out):
            buf.write(f"{name},{value}\n")
        _emit(buf.getvalue(), args.output)
    else:
        _emit(dumps_json(out) + "\n", args.output)
    return EXIT_OK


def _fit_accuracy(report, grid: SamplingGrid, args, config: EstimationConfig,
                  logger: Logger) -> Dict[str, Any]:
    if report.raw is None or not report.is_generic or report.mu_hat is None or report.rho_hat is None:
        return {"available": False, "reason": "joint fit unavailable"}
    k, th, g2 = report.raw
    hp = HestonParams(VolParams(k, th, g2), report.mu_hat, report.rho_hat)
    ok, reason = validate_heston(hp)
    if not ok:
        return {"available": False, "reason": reason}
    harness = AccuracyHarness(config, logger)
    result = harness.run_joint(hp, grid, args.accuracy_trajectories,
                               seed=config.seed, threads=_threads(args))
    return {"available": True, **result.to_dict()}


def mode_simulate(args, config: EstimationConfig, logger: Logger) -> int:
    """시뮬레이션 모드"""
    for name in ("kappa", "theta", "gamma2", "n"):
        if getattr(args, name) is None:
            raise DomainError(f"simulate needs --{name}", reason=f"missing --{name}")
    vol = require_valid(VolParams(args.kappa, args.theta, args.gamma2))
    grid = SamplingGrid(config.dt, args.n)
    scheme = Scheme(args.scheme) if args.scheme else DEFAULT_ACCURACY_SCHEME
    cfg = PathConfig(
        scheme=scheme,
        delta=args.delta if args.delta is not None else (
            config.dt / config.euler_substeps if scheme == Scheme.EULER else None),
        y0=args.y0,
        dismissal=config.dismissal,
        seed=config.seed,
        x0=args.x0 if args.x0 is not None else config.x0,
        annualization=config.annualization,
    )

    try:
        if scheme == Scheme.EULER:
            hp = HestonParams(vol, args.mu or 0.0, args.rho or 0.0)
            series = joint_euler_path(hp, grid, cfg, logger)
        else:
            series = subsampled_vol_series(vol, grid, cfg, logger)
    except PathDismissed as e:
        logger.error(f"Dismissed trajectories: 1 (step {e.step})")
        return EXIT_DISMISSED

    buf = io.StringIO()
    write_path_csv(series, buf)
    _emit(buf.getvalue(), args.output)
    logger.info(f"Simulated N={grid.N} observations ({scheme.value})")
    return EXIT_OK


def mode_accuracy(args, config: EstimationConfig, logger: Logger) -> int:
    """정확도 하네스 모드"""
    if args.zeta is None:
        raise DomainError("accuracy needs --zeta", reason="missing --zeta")
    omega, tbar = args.omega, args.tbar
    if omega is None and tbar is None:
        omega, tbar = REFERENCE_OMEGA, REFERENCE_TBAR
    elif omega is None:
        omega = math.exp(-tbar)
    spec = AccuracySpec(
        canonical=CanonicalParams(omega, args.zeta),
        tbar=tbar,
        n_values=tuple(config.n_values),
        trajectories=config.trajectories,
        scheme=Scheme(args.scheme) if args.scheme else DEFAULT_ACCURACY_SCHEME,
        seed=config.seed,
        euler_substeps=config.euler_substeps,
        threads=_threads(args),
    )
    result = AccuracyHarness(config, logger).run(spec)

    if args.long_csv:
        with open(args.long_csv, "w", encoding="utf-8", newline="") as f:
            write_long_csv(result, f)

    fits, sqrtn_reason = None, None
    try:
        fits = sqrtn_constants(result, config.sqrtn_min_n)
    except HestonError as e:
        sqrtn_reason = e.reason
        logger.info(f"sqrt(N) constants unavailable: {e.reason}")

    if args.format == "csv":
        buf = io.StringIO()
        write_table_csv(result, buf)
        if fits is not None:
            buf.write("\n")
            write_sqrtn_csv(fits, buf)
        _emit(buf.getvalue(), args.output)
        return EXIT_OK

    out = result.to_dict()
    out["canonical"] = spec.canonical.to_dict()
    if fits is not None:
        out["sqrt_n"] = {"available": True, **{
            name: {"C": fit.C, "residual": fit.residual, "N_used": list(fit.n_used)}
            for name, fit in fits.items()}}
    else:
        out["sqrt_n"] = {"available": False, "reason": sqrtn_reason}

    trend = genericity_rate(result)
    out["genericity"] = {"fractions": trend.fractions, "nondecreasing": trend.nondecreasing}

    n_max = result.n_values[-1]
    normality: Dict[str, Any] = {}
    for name in ESTIMATORS:
        try:
            normality[name] = normality_diagnostic(result.samples[(name, n_max)],
                                                   config.normality_alpha).to_dict()
        except HestonError as e:
            normality[name] = {"available": False, "reason": e.reason}
    out["normality"] = {"N": n_max, **normality}

    if spec.canonical.zeta <= 1.0:
        tail: Dict[str, Any] = {"label": "EXPLORATORY"}
        for name in ESTIMATORS:
            try:
                tail[name] = tail_probe(result.samples[(name, n_max)], n_max,
                                        config.tail_fraction, config.tail_min_sample).to_dict()
            except HestonError as e:
                tail[name] = {"available": False, "reason": e.reason}
        out["tail"] = tail

    _emit(dumps_json(out) + "\n", args.output)
    return EXIT_OK


MODES = {
    "fit": mode_fit,
    "simulate": mode_simulate,
    "accuracy": mode_accuracy,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Heston MLE v1.0')

    parser.add_argument('mode', choices=list(MODES), help='Operating mode')
    parser.add_argument('input', nargs='?', help='Input CSV (fit)')

    # Common
    parser.add_argument('--preset', choices=list(PRESETS), help='Configuration preset')
    parser.add_argument('--seed', type=int, help='Random seed')
    parser.add_argument('--output', type=str, help='Output path (default: stdout)')
    parser.add_argument('--format', choices=['json', 'csv'], default=None, help='Output format')
    parser.add_argument('--threads', type=int, help='Worker cap (env HESTON_MLE_THREADS)')
    parser.add_argument('--scheme', choices=[s.value for s in Scheme], help='Simulation scheme')

    # Sampling
    parser.add_argument('--dt', type=float, help='Sub-sampling interval T')
    parser.add_argument('--annualization', type=float, help='Variance annualization factor A')

    # Fit
    parser.add_argument('--ohlc', action='store_true', help='Input is OHLC bars (Garman-Klass)')
    parser.add_argument('--paper-gk', '--raw-gk', dest='raw_gk', action='store_true',
                        help='Garman-Klass on raw price differences instead of log prices')
    parser.add_argument('--delimiter', type=str, default=',', help='CSV delimiter')
    parser.add_argument('--time-col', type=str, default='t')
    parser.add_argument('--price-col', type=str, default='price')
    parser.add_argument('--var-col', type=str, default='var')
    parser.add_argument('--accuracy-trajectories', type=int, default=0,
                        help='Re-simulate the fitted joint model K times')

    # Simulate
    parser.add_argument('--kappa', type=float)
    parser.add_argument('--theta', type=float)
    parser.add_argument('--gamma2', type=float)
    parser.add_argument('--mu', type=float)
    parser.add_argument('--rho', type=float)
    parser.add_argument('--n', type=int, help='Number of observations N')
    parser.add_argument('--delta', type=float, help='Euler step')
    parser.add_argument('--y0', type=float, help='Initial variance (default: stationary draw)')
    parser.add_argument('--x0', type=float, help='Initial price')

    # Accuracy
    parser.add_argument('--zeta', type=float)
    parser.add_argument('--omega', type=float)
    parser.add_argument('--tbar', type=float)
    parser.add_argument('--n-list', type=str, help='Comma-separated N values')
    parser.add_argument('--trajectories', type=int)
    parser.add_argument('--long-csv', type=str, help='Long-format CSV path')

    # Logging
    parser.add_argument('--log-dir', type=str, default='logs')
    parser.add_argument('--no-log-file', action='store_true')
    parser.add_argument('--quiet', action='store_true', help='No console logging')

    return parser


def build_config(args) -> EstimationConfig:
    """프리셋 + 플래그"""
    config = PRESETS[args.preset] if args.preset else EstimationConfig()
    overrides: Dict[str, Any] = {
        "log_dir": None if args.no_log_file else args.log_dir,
        "log_echo": not args.quiet,
    }
    if args.dt is not None:
        overrides["dt"] = args.dt
    if args.annualization is not None:
        overrides["annualization"] = args.annualization
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trajectories is not None:
        overrides["trajectories"] = args.trajectories
    if args.n_list:
        try:
            overrides["n_values"] = [int(x) for x in args.n_list.split(",") if x.strip()]
        except ValueError:
            raise DomainError(f"bad --n-list {args.n_list!r}", reason="bad --n-list") from None
    elif args.mode == "accuracy" and not args.preset:
        overrides["n_values"] = list(REFERENCE_N_VALUES)
    threads = _threads(args)
    if threads is not None:
        overrides["threads"] = threads
    config = replace(config, **overrides)
    if not config.dt > 0:
        raise DomainError(f"--dt must be positive, got {config.dt}", reason="T <= 0")
    return config


def main(argv: Optional[List[str]] = None) -> int:
    """메인 진입점"""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.quiet:
        print_banner()

    logger = Logger(f"heston_{args.mode}",
                    log_dir=None if args.no_log_file else args.log_dir,
                    echo=not args.quiet)
    try:
        config = build_config(args)
        logger.info(f"Mode: {args.mode.upper()}")
        return MODES[args.mode](args, config, logger)

    except HestonError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_INPUT
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except KeyboardInterrupt:
        print("\n\n✋ Stopped by user", file=sys.stderr)
        return 130
    except Exception as e:
        print(f"\n\n❌ Error: {e}", file=sys.stderr)
        import traceback
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
