"""Loading firm panels from delimited files and generating synthetic panels."""

from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Iterable, Optional

import numpy as np

from .domain import DailyRecord, FirmPanel, Group, QuarterlyRecord, add_months

QUARTERLY_FEATURES = (
    "epsfiq", "atq", "revtq", "nopiq", "xoprq", "apq", "gdwlq", "rectq", "xrdq", "cogsq",
    "rcpq", "ceqq", "niq", "oiadpq", "oibdpq", "dpq", "ppentq", "piq", "txtq",
)
DAILY_FEATURES = (
    "ret", "prc", "vol", "shrout", "vwretd",
    "absret", "logprc", "logvol", "turnover", "exret", "logmcap",
)


class SchemaError(ValueError):
    pass


class MalformedRowError(ValueError):
    pass


class DuplicateRecordError(ValueError):
    pass


@dataclass(frozen=True)
class SchemaConfig:
    firm_column: str = "cusip"
    date_column: str = "rdq"
    eps_column: str = "epsfiq"
    assets_column: str = "atq"
    group_column: Optional[str] = "financialfirm"
    analyst_column: Optional[str] = "EPS_Mean_Analyst"
    quarterly_features: tuple[str, ...] = QUARTERLY_FEATURES
    daily_firm_column: str = "cusip"
    daily_date_column: str = "date"
    daily_features: tuple[str, ...] = DAILY_FEATURES
    delimiter: str = ","
    missing_token: str = ""

    def __post_init__(self):
        object.__setattr__(self, "quarterly_features", tuple(self.quarterly_features))
        object.__setattr__(self, "daily_features", tuple(self.daily_features))
        for name in ("firm_column", "date_column", "eps_column", "assets_column",
                     "daily_firm_column", "daily_date_column"):
            if not getattr(self, name):
                raise SchemaError(f"schema: {name} is mandatory")
        for label, cols in (("quarterly", self.quarterly_features), ("daily", self.daily_features)):
            if not cols:
                raise SchemaError(f"schema: no {label} feature columns")
            if len(set(cols)) != len(cols):
                raise SchemaError(f"schema: duplicate {label} feature columns")
        if len(self.delimiter) != 1:
            raise SchemaError("schema: delimiter must be a single character")

    def quarterly_header(self) -> list[str]:
        head = [self.firm_column, self.date_column]
        for col in (self.group_column, self.analyst_column, self.eps_column, self.assets_column):
            if col and col not in head and col not in self.quarterly_features:
                head.append(col)
        return head + list(self.quarterly_features)

    def daily_header(self) -> list[str]:
        return [self.daily_firm_column, self.daily_date_column] + list(self.daily_features)

    @property
    def eps_feature_index(self) -> Optional[int]:
        cols = self.quarterly_features
        return cols.index(self.eps_column) if self.eps_column in cols else None

    @property
    def assets_feature_index(self) -> Optional[int]:
        cols = self.quarterly_features
        return cols.index(self.assets_column) if self.assets_column in cols else None


# reading

def _parse_number(text: str, missing: str, where: str) -> Optional[float]:
    if text == missing:
        return None
    try:
        value = float(text)
    except ValueError:
        raise MalformedRowError(f"{where}: cannot parse number {text!r}") from None
    if not math.isfinite(value):
        raise MalformedRowError(f"{where}: non-finite value {text!r}")
    return value


def _parse_date(text: str, where: str) -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError:
        raise MalformedRowError(f"{where}: cannot parse date {text!r}") from None


def _read_rows(path, delimiter: str, required: Iterable[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        index = {name: i for i, name in enumerate(header)}
        missing = [c for c in required if c not in index]
        if missing:
            raise SchemaError(f"{path}: missing mandatory column(s) {missing}")
        for row in reader:
            where = f"{path}:{reader.line_num}"
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedRowError(f"{where}: expected {len(header)} fields, got {len(row)}")
            yield where, index, row


def load_panels(quarterly_path, daily_path, schema: SchemaConfig = SchemaConfig()) -> list[FirmPanel]:
    """Read one panel per firm, sorted by firm id, records sorted by date."""
    miss = schema.missing_token
    quarters: dict[str, dict[date, QuarterlyRecord]] = defaultdict(dict)
    required = [schema.firm_column, schema.date_column, schema.eps_column, schema.assets_column,
                *schema.quarterly_features]
    for where, idx, row in _read_rows(quarterly_path, schema.delimiter, required):
        firm = row[idx[schema.firm_column]].strip()
        if not firm:
            raise MalformedRowError(f"{where}: empty firm id")
        when = _parse_date(row[idx[schema.date_column]], where)
        if when in quarters[firm]:
            raise DuplicateRecordError(f"{where}: duplicate record for ({firm}, {when})")
        group = Group.NONFINANCIAL
        if schema.group_column and schema.group_column in idx:
            try:
                group = Group.parse(row[idx[schema.group_column]])
            except ValueError as exc:
                raise MalformedRowError(f"{where}: {exc}") from None
        analyst = None
        if schema.analyst_column and schema.analyst_column in idx:
            analyst = _parse_number(row[idx[schema.analyst_column]], miss, where)
        try:
            quarters[firm][when] = QuarterlyRecord(
                firm=firm,
                report_date=when,
                eps=_parse_number(row[idx[schema.eps_column]], miss, where),
                total_assets=_parse_number(row[idx[schema.assets_column]], miss, where),
                features=tuple(_parse_number(row[idx[c]], miss, where) for c in schema.quarterly_features),
                group=group,
                analyst_mean_eps=analyst,
            )
        except ValueError as exc:
            if isinstance(exc, MalformedRowError):
                raise
            raise MalformedRowError(f"{where}: {exc}") from None

    days: dict[str, dict[date, DailyRecord]] = defaultdict(dict)
    required = [schema.daily_firm_column, schema.daily_date_column, *schema.daily_features]
    for where, idx, row in _read_rows(daily_path, schema.delimiter, required):
        firm = row[idx[schema.daily_firm_column]].strip()
        if not firm:
            raise MalformedRowError(f"{where}: empty firm id")
        when = _parse_date(row[idx[schema.daily_date_column]], where)
        if when in days[firm]:
            raise DuplicateRecordError(f"{where}: duplicate record for ({firm}, {when})")
        days[firm][when] = DailyRecord(
            firm, when, tuple(_parse_number(row[idx[c]], miss, where) for c in schema.daily_features))

    panels = []
    for firm in sorted(set(quarters) | set(days)):
        q = quarters.get(firm, {})
        d = days.get(firm, {})
        panels.append(FirmPanel(firm, tuple(q[k] for k in sorted(q)), tuple(d[k] for k in sorted(d))))
    return panels


# writing

def _fmt(value: Optional[float], missing: str) -> str:
    return missing if value is None else repr(float(value))


def write_panels(panels: Iterable[FirmPanel], quarterly_path, daily_path,
                 schema: SchemaConfig = SchemaConfig()) -> None:
    """Write panels in the layout :func:`load_panels` reads back."""
    panels = list(panels)
    miss = schema.missing_token
    qhead = schema.quarterly_header()
    feat_pos = {c: i for i, c in enumerate(schema.quarterly_features)}
    for path in (quarterly_path, daily_path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(quarterly_path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, delimiter=schema.delimiter, lineterminator="\n")
        out.writerow(qhead)
        for panel in panels:
            for q in panel.quarters:
                row = []
                for col in qhead:
                    if col == schema.firm_column:
                        row.append(q.firm)
                    elif col == schema.date_column:
                        row.append(q.report_date.isoformat())
                    elif col == schema.group_column:
                        row.append("1" if q.group is Group.FINANCIAL else "0")
                    elif col == schema.analyst_column:
                        row.append(_fmt(q.analyst_mean_eps, miss))
                    elif col in feat_pos:
                        row.append(_fmt(q.features[feat_pos[col]], miss))
                    elif col == schema.eps_column:
                        row.append(_fmt(q.eps, miss))
                    else:
                        row.append(_fmt(q.total_assets, miss))
                out.writerow(row)
    with open(daily_path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, delimiter=schema.delimiter, lineterminator="\n")
        out.writerow(schema.daily_header())
        for panel in panels:
            for d in panel.days:
                out.writerow([d.firm, d.date.isoformat(), *(_fmt(v, miss) for v in d.features)])


# synthetic data

@dataclass(frozen=True)
class SyntheticConfig:
    n_firms: int = 200
    n_quarters: int = 40
    ar_coefficient: float = 0.6
    seasonal_amplitude: float = 0.5
    noise_std: float = 0.2
    analyst_noise_std: float = 0.3
    missing_rate: float = 0.01
    seed: int = 20240601
    financial_share: float = 0.2
    end_date: date = date(2017, 12, 31)
    trading_days_per_quarter: int = 63
    window_size: int = 20
    horizon: int = 1

    def __post_init__(self):
        if isinstance(self.end_date, str):
            object.__setattr__(self, "end_date", date.fromisoformat(self.end_date))
        if self.n_firms < 1:
            raise ValueError("n_firms must be positive")
        if self.n_quarters < 1:
            raise ValueError("n_quarters must be positive")
        if not -1.0 < self.ar_coefficient < 1.0:
            raise ValueError("ar_coefficient must lie in (-1, 1)")
        if min(self.seasonal_amplitude, self.noise_std, self.analyst_noise_std) < 0:
            raise ValueError("amplitudes and noise levels must be >= 0")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must lie in [0, 1)")
        if not 0.0 <= self.financial_share <= 1.0:
            raise ValueError("financial_share must lie in [0, 1]")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.trading_days_per_quarter < 1:
            raise ValueError("trading_days_per_quarter must be positive")
        if self.n_quarters < self.window_size + self.horizon:
            raise ValueError("n_quarters must be at least window_size + horizon")


_SEASON = np.array([1.0, 0.0, -1.0, 0.0])
_BURN_IN = 8


def _quarter_dates(cfg: SyntheticConfig) -> list[date]:
    return [add_months(cfg.end_date, -3 * (cfg.n_quarters - 1 - i)) for i in range(cfg.n_quarters)]


def _r(x, decimals=6) -> np.ndarray:
    # rounding keeps the written files compact; values are stored already rounded
    return np.round(np.asarray(x, dtype=np.float64), decimals)


_DAILY_DECIMALS = np.array([6, 4, 0, 0, 6, 6, 6, 6, 6, 6, 6])


def generate_synthetic(config: SyntheticConfig = SyntheticConfig()) -> list[FirmPanel]:
    """Panels whose EPS is a seasonal AR(1) process.

    ``eps_t = phi * eps_{t-1} + A * s((t + phase) mod 4) + noise`` with a random
    seasonal phase per firm.  Fundamentals are noisy linear functions of EPS and
    the current season, scaled by total assets.  Analyst consensus is the next
    quarter's true EPS plus noise.  Daily series are random walks with a
    firm-level drift on top of a shared market return.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    n_q = cfg.n_quarters
    n_feat = len(QUARTERLY_FEATURES)
    dates = _quarter_dates(cfg)
    tdays = cfg.trading_days_per_quarter
    day_dates = [qd - timedelta(days=tdays - 1 - j) for qd in dates for j in range(tdays)]
    n_days = len(day_dates)

    # shared structure: fundamentals-to-state loadings and the market return
    base = rng.uniform(0.05, 0.6, size=n_feat - 2)
    eps_load = rng.normal(0.0, 0.08, size=n_feat - 2)
    season_load = rng.normal(0.0, 0.05, size=n_feat - 2)
    market = rng.normal(3e-4, 0.01, size=n_days)

    panels = []
    width = max(3, len(str(cfg.n_firms - 1)))
    for f in range(cfg.n_firms):
        firm = f"F{f:0{width}d}"
        group = Group.FINANCIAL if rng.random() < cfg.financial_share else Group.NONFINANCIAL
        phase = int(rng.integers(4))

        # EPS path, one extra quarter so every analyst forecast has a target
        eps = np.zeros(n_q + 1 + _BURN_IN)
        season = _SEASON[(np.arange(-_BURN_IN, n_q + 1) + phase) % 4]
        shocks = rng.normal(0.0, 1.0, size=eps.size)
        prev = 0.0
        for t in range(eps.size):
            prev = cfg.ar_coefficient * prev + cfg.seasonal_amplitude * season[t] + cfg.noise_std * shocks[t]
            eps[t] = prev
        eps, season = eps[_BURN_IN:], season[_BURN_IN:]
        analyst = eps[1:] + cfg.analyst_noise_std * rng.normal(size=n_q)
        eps = eps[:n_q]
        season = season[:n_q]

        log_assets = rng.normal(7.0, 1.0) + np.cumsum(rng.normal(0.01, 0.03, size=n_q))
        assets = np.exp(log_assets)
        ratios = (base + np.outer(eps, eps_load) + np.outer(season, season_load)
                  + 0.02 * rng.normal(size=(n_q, n_feat - 2)))
        feats = np.empty((n_q, n_feat))
        feats[:, 0] = eps
        feats[:, 1] = assets
        feats[:, 2:] = ratios * assets[:, None]
        feats[:, 0] = _r(feats[:, 0], 4)
        feats[:, 1:] = _r(feats[:, 1:], 3)
        blank = rng.random((n_q, n_feat)) < cfg.missing_rate
        analyst = _r(analyst, 4)

        quarters = []
        for t in range(n_q):
            row = [None if blank[t, k] else float(feats[t, k]) for k in range(n_feat)]
            quarters.append(QuarterlyRecord(firm, dates[t], row[0], row[1], tuple(row), group,
                                            float(analyst[t])))

        # daily market block
        drift = rng.normal(3e-4, 5e-4)
        beta = rng.uniform(0.5, 1.5)
        sigma = rng.uniform(0.01, 0.03)
        ret = drift + beta * market + sigma * rng.normal(size=n_days)
        prc = rng.uniform(10.0, 100.0) * np.cumprod(1.0 + ret)
        shrout = np.repeat(assets / rng.uniform(20.0, 60.0), tdays) * 1000.0
        vol = shrout * np.exp(rng.normal(-5.0, 0.4, size=n_days))
        daily = np.column_stack([
            ret, prc, vol, shrout, market,
            np.abs(ret), np.log(prc), np.log(vol), vol / shrout, ret - market, np.log(prc * shrout),
        ])
        daily = np.stack([_r(daily[:, k], d) for k, d in enumerate(_DAILY_DECIMALS)], axis=1)
        days = tuple(DailyRecord(firm, day_dates[i], tuple(float(v) for v in daily[i])) for i in range(n_days))
        panels.append(FirmPanel(firm, tuple(quarters), days))
    return panels
