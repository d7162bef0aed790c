"""
Heston MLE v1.0 - Ingest Module
시장 데이터 적재 (가격+분산 CSV, OHLC 봉), Garman-Klass 분산 프록시, 연율화
"""

import csv
from datetime import datetime
from typing import List, Optional, Union, Any, Dict, Sequence
from dataclasses import dataclass, replace

import numpy as np
from dateutil import parser as date_parser

from core import (
    Logger, SamplingGrid, VolSeries, JointSeries, DomainError, IngestError,
)

GK_COEF = 0.386   # 2 ln 2 - 1 (반올림)


# ============================================================================
# Schema & Records
# ============================================================================

@dataclass(frozen=True)
class CsvSchema:
    """CSV 컬럼 선언 (자동 감지 없음)"""
    time_col: str = "t"
    price_col: str = "price"
    var_col: str = "var"
    open_col: str = "open"
    high_col: str = "high"
    low_col: str = "low"
    close_col: str = "close"
    delimiter: str = ","


@dataclass(frozen=True)
class MarketRecord:
    """관측 하나 (squared_vol 은 분산)"""
    index: int
    t: str
    price: float
    squared_vol: float


@dataclass(frozen=True)
class OhlcBar:
    """봉 하나: high H, low L, last Q, previous-last O"""
    t: str
    open: float
    high: float
    low: float
    close: float
    T: float

    def __post_init__(self):
        for name in ("open", "high", "low", "close"):
            if not getattr(self, name) > 0:
                raise IngestError(f"non-positive {name} price {getattr(self, name)!r}")
        if not self.low <= self.high:
            raise IngestError(f"low {self.low} above high {self.high}")
        if not self.low <= self.close <= self.high:
            raise IngestError(f"close {self.close} outside [low, high]")
        if not self.T > 0:
            raise IngestError(f"bar duration must be positive, got {self.T}")


@dataclass(frozen=True, eq=False)
class GarmanKlassResult:
    values: np.ndarray
    clamp_events: int


# ============================================================================
# Parsing
# ============================================================================

def _parse_float(row: Dict[str, str], col: str, line: int) -> float:
    text = (row.get(col) or "").strip()
    try:
        return float(text)
    except ValueError:
        raise IngestError(f"cannot parse {col}={text!r} as a number", line=line) from None


def _parse_time(text: str, line: int) -> Union[float, datetime]:
    text = (text or "").strip()
    try:
        return float(text)
    except ValueError:
        pass
    try:
        return date_parser.parse(text)
    except (ValueError, OverflowError):
        raise IngestError(f"cannot parse time {text!r}", line=line) from None


def _check_increasing(prev: Any, cur: Any, line: int) -> None:
    if prev is None:
        return
    if type(prev) is not type(cur):
        raise IngestError("mixed numeric and date time stamps", line=line)
    if not cur > prev:
        raise IngestError(f"time stamps must be strictly increasing ({cur} after {prev})", line=line)


def _open_reader(f, schema: CsvSchema, required: Sequence[str]) -> csv.DictReader:
    reader = csv.DictReader(f, delimiter=schema.delimiter)
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if missing:
        raise IngestError(f"missing column(s): {', '.join(missing)}", line=1)
    return reader


# ============================================================================
# Loader
# ============================================================================

class MarketDataLoader:
    """CSV -> 검증된 레코드 -> JointSeries"""

    def __init__(self, schema: Optional[CsvSchema] = None, logger: Optional[Logger] = None):
        self.schema = schema or CsvSchema()
        self.logger = logger or Logger.silent()

    def load_joint(self, path: str) -> List[MarketRecord]:
        """헤더 t,price,var"""
        s = self.schema
        records: List[MarketRecord] = []
        with open(path, newline="", encoding="utf-8") as f:
            reader = _open_reader(f, s, (s.time_col, s.price_col, s.var_col))
            prev = None
            for line, row in enumerate(reader, start=2):
                t_text = row.get(s.time_col) or ""
                t = _parse_time(t_text, line)
                _check_increasing(prev, t, line)
                prev = t
                price = _parse_float(row, s.price_col, line)
                var = _parse_float(row, s.var_col, line)
                if not price > 0:
                    raise IngestError(f"non-positive price {price!r}", line=line)
                if not var >= 0:
                    raise IngestError(f"negative variance {var!r}", line=line)
                records.append(MarketRecord(len(records), t_text.strip(), price, var))
        self.logger.info(f"Loaded {len(records)} records from {path}")
        return records

    def load_ohlc(self, path: str, T: float) -> List[OhlcBar]:
        """헤더 t,open,high,low,close; O 는 직전 봉의 종가 (첫 봉은 자신의 open)"""
        s = self.schema
        bars: List[OhlcBar] = []
        with open(path, newline="", encoding="utf-8") as f:
            reader = _open_reader(f, s, (s.time_col, s.high_col, s.low_col, s.close_col))
            has_open = s.open_col in (reader.fieldnames or [])
            prev_t = None
            prev_close: Optional[float] = None
            for line, row in enumerate(reader, start=2):
                t_text = row.get(s.time_col) or ""
                t = _parse_time(t_text, line)
                _check_increasing(prev_t, t, line)
                prev_t = t
                high = _parse_float(row, s.high_col, line)
                low = _parse_float(row, s.low_col, line)
                close = _parse_float(row, s.close_col, line)
                if prev_close is not None:
                    open_ = prev_close
                elif has_open:
                    open_ = _parse_float(row, s.open_col, line)
                else:
                    open_ = close
                try:
                    bars.append(OhlcBar(t_text.strip(), open_, high, low, close, T))
                except IngestError as e:
                    raise IngestError(e.reason, line=line) from None
                prev_close = close
        self.logger.info(f"Loaded {len(bars)} OHLC bars from {path} (open = previous close)")
        return bars

    def build(self, path: str, T: float, ohlc: bool = False, raw_gk: bool = False,
              annualization: float = 1.0) -> JointSeries:
        if ohlc:
            bars = self.load_ohlc(path, T)
            gk = garman_klass_variance(bars, raw_prices=raw_gk)
            if gk.clamp_events:
                self.logger.warning(f"Garman-Klass clamped {gk.clamp_events} negative bar(s) to 0")
            records = records_from_bars(bars, gk.values)
        else:
            records = self.load_joint(path)
        series = build_joint_series(records, T)
        if annualization != 1.0:
            series = annualize(series, annualization)
            self.logger.info(f"Annualized variance with A={annualization:g}")
        return series


def load_joint_csv(path: str, schema: Optional[CsvSchema] = None) -> List[MarketRecord]:
    return MarketDataLoader(schema).load_joint(path)


def load_ohlc_csv(path: str, T: float, schema: Optional[CsvSchema] = None) -> List[OhlcBar]:
    return MarketDataLoader(schema).load_ohlc(path, T)


# ============================================================================
# Volatility Proxy
# ============================================================================

def garman_klass_variance(bars: Sequence[OhlcBar], raw_prices: bool = False) -> GarmanKlassResult:
    """
    봉별 분산
    기본: 0.5 (ln H/L)^2 - 0.386 (ln Q/O)^2
    raw_prices: 0.5 (H - L)^2 - 0.386 Q^2 (가격 차 그대로, 비교용)
    음수는 0 으로 절삭
    """
    high = np.array([b.high for b in bars], dtype=float)
    low = np.array([b.low for b in bars], dtype=float)
    close = np.array([b.close for b in bars], dtype=float)
    open_ = np.array([b.open for b in bars], dtype=float)

    if raw_prices:
        raw = 0.5 * (high - low) ** 2 - GK_COEF * close ** 2
    else:
        raw = 0.5 * np.log(high / low) ** 2 - GK_COEF * np.log(close / open_) ** 2
    clamped = raw < 0.0
    return GarmanKlassResult(np.where(clamped, 0.0, raw), int(clamped.sum()))


def records_from_bars(bars: Sequence[OhlcBar], variances: np.ndarray) -> List[MarketRecord]:
    return [MarketRecord(i, b.t, b.close, float(v)) for i, (b, v) in enumerate(zip(bars, variances))]


# ============================================================================
# Annualization
# ============================================================================

SeriesLike = Union[VolSeries, JointSeries, np.ndarray, float]


def _check_factor(A: float) -> None:
    if not A > 0:
        raise DomainError(f"annualization factor must be positive, got {A}", reason="A <= 0")


def annualize(series: SeriesLike, A: float) -> SeriesLike:
    """R = A Y"""
    _check_factor(A)
    if isinstance(series, (VolSeries, JointSeries)):
        return replace(series, values=series.values * A)
    return np.asarray(series, dtype=float) * A


def deannualize(series: SeriesLike, A: float) -> SeriesLike:
    """Y = R / A"""
    _check_factor(A)
    if isinstance(series, (VolSeries, JointSeries)):
        return replace(series, values=series.values / A)
    return np.asarray(series, dtype=float) / A


def build_joint_series(records: Sequence[MarketRecord], T: float) -> JointSeries:
    """grid (T, N = 레코드 수 - 1)"""
    if len(records) < 3:
        raise IngestError(f"need at least 3 records, got {len(records)}")
    if not T > 0:
        raise DomainError(f"T must be positive, got {T}", reason="T <= 0")
    for r in records:
        if not r.squared_vol > 0:
            raise IngestError(f"non-positive variance {r.squared_vol!r} at record index {r.index}")
    grid = SamplingGrid(T, len(records) - 1)
    return JointSeries(
        grid,
        np.array([r.squared_vol for r in records], dtype=float),
        np.array([r.price for r in records], dtype=float),
    )
