"""Asset scaling, EPS clipping, gap interpolation, studentization and windowing.

Per-cell order is scale by assets -> clip EPS -> interpolate gaps -> studentize.
All statistics are fitted once on training-period data and then frozen.
Internally a gap is ``nan``; records keep using ``None``.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import date
from typing import Iterable, Optional, Sequence

import numpy as np

from .domain import FirmPanel, QuarterlyRecord, Sample

log = logging.getLogger(__name__)


class ZeroVarianceError(ValueError):
    pass


@dataclass(frozen=True)
class StudentizeStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ZeroVarianceError("zero variance")


@dataclass(frozen=True)
class ClipBounds:
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError("clip bounds out of order")


@dataclass(frozen=True)
class PreprocessConfig:
    window_size: int = 20
    horizon: int = 1
    max_gap: int = 1
    daily_steps: int = 20
    percentiles: tuple[float, float] = (1.0, 99.0)
    eps_index: int = 0
    # feature positions left out of asset scaling (EPS is per share, atq is the divisor)
    unscaled_indices: tuple[int, ...] = (0, 1)

    def __post_init__(self):
        object.__setattr__(self, "percentiles", tuple(float(p) for p in self.percentiles))
        object.__setattr__(self, "unscaled_indices", tuple(int(i) for i in self.unscaled_indices))
        if self.window_size < 1 or self.horizon < 1 or self.daily_steps < 1:
            raise ValueError("window_size, horizon and daily_steps must be positive")
        if self.max_gap < 0:
            raise ValueError("max_gap must be >= 0")
        lo, hi = self.percentiles
        if not 0.0 <= lo < hi <= 100.0:
            raise ValueError("percentiles must satisfy 0 <= low < high <= 100")
        if self.eps_index < 0:
            raise ValueError("eps_index must be >= 0")
        if self.eps_index not in self.unscaled_indices:
            raise ValueError("the EPS feature must not be asset-scaled (labels are per-share EPS)")


# scalar transforms

def scale_by_assets(x: float, atq: float) -> float:
    if not (math.isfinite(x) and math.isfinite(atq)):
        raise ValueError("scale_by_assets needs finite inputs")
    return x / max(1.0, atq)


def fit_studentize(values: Sequence[float]) -> StudentizeStats:
    """Mean and population (1/n) standard deviation."""
    vals = [float(v) for v in values]
    n = len(vals)
    if n < 2:
        raise ValueError("fit_studentize needs at least two values")
    mu = math.fsum(vals) / n
    var = math.fsum((v - mu) ** 2 for v in vals) / n
    if var == 0.0:
        raise ZeroVarianceError("zero variance")
    return StudentizeStats(mu, math.sqrt(var))


def apply_studentize(values, stats: StudentizeStats):
    arr = np.asarray(values, dtype=np.float64)
    out = (arr - stats.mean) / stats.std
    return out if isinstance(values, np.ndarray) else out.tolist()


def percentile(values: Sequence[float], p: float) -> float:
    """Linear interpolation between order statistics at rank ``p/100 * (n-1)``."""
    s = sorted(float(v) for v in values)
    if not s:
        raise ValueError("percentile of empty input")
    r = p / 100.0 * (len(s) - 1)
    lo = math.floor(r)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (r - lo) * (s[hi] - s[lo])


def fit_clip_bounds(eps_values: Sequence[float], percentiles: tuple[float, float] = (1.0, 99.0)) -> ClipBounds:
    if len(eps_values) == 0:
        raise ValueError("fit_clip_bounds needs values")
    return ClipBounds(percentile(eps_values, percentiles[0]), percentile(eps_values, percentiles[1]))


def clip(eps, bounds: ClipBounds):
    if isinstance(eps, np.ndarray):
        return np.minimum(np.maximum(eps, bounds.lower), bounds.upper)
    return min(max(eps, bounds.lower), bounds.upper)


# gaps

def fill_gaps(values: np.ndarray, max_gap: int) -> np.ndarray:
    """Linearly interpolate interior ``nan`` runs of length <= ``max_gap``.

    Works column-wise on a 1-D or 2-D array indexed by time step.  Leading,
    trailing and oversized runs stay ``nan``; observed cells are untouched.
    """
    arr = np.array(values, dtype=np.float64)
    cols = arr.reshape(arr.shape[0], -1)
    n = cols.shape[0]
    for k in range(cols.shape[1]):
        col = cols[:, k]
        missing = np.isnan(col)
        if not missing.any():
            continue
        t = 0
        while t < n:
            if not missing[t]:
                t += 1
                continue
            start = t
            while t < n and missing[t]:
                t += 1
            left, right = start - 1, t
            if left < 0 or right >= n or t - start > max_gap:
                continue
            a, b = col[left], col[right]
            span = right - left
            for j in range(start, right):
                w = j - left
                # weighted form: a single-cell gap gets (a + b) / 2, the correctly rounded midpoint
                col[j] = ((span - w) * a + w * b) / span
    return arr


def interpolate_gaps(panel: FirmPanel, max_gap: int) -> FirmPanel:
    """Panel with short interior quarterly gaps filled; longer gaps remain ``None``.

    Windows that cover a remaining gap are rejected when samples are built.
    """
    if not panel.quarters:
        return panel
    rows = np.array([[np.nan if v is None else v for v in (q.eps, q.total_assets, *q.features)]
                     for q in panel.quarters], dtype=np.float64)
    filled = fill_gaps(rows, max_gap)
    quarters = []
    for q, row in zip(panel.quarters, filled):
        vals = [None if np.isnan(v) else float(v) for v in row]
        quarters.append(QuarterlyRecord(q.firm, q.report_date, vals[0], vals[1], tuple(vals[2:]),
                                        q.group, q.analyst_mean_eps))
    return FirmPanel(panel.firm, tuple(quarters), panel.days)


# fitted transform set

@dataclass(frozen=True)
class TransformSet:
    """Frozen statistics fitted on training data; reused for every partition."""

    config: PreprocessConfig
    clip_bounds: ClipBounds
    quarterly_stats: tuple[Optional[StudentizeStats], ...]
    daily_stats: tuple[Optional[StudentizeStats], ...]
    cutoff: Optional[date] = None
    quarterly_names: tuple[str, ...] = ()
    daily_names: tuple[str, ...] = ()

    @property
    def quarterly_kept(self) -> list[int]:
        return [i for i, s in enumerate(self.quarterly_stats) if s is not None]

    @property
    def daily_kept(self) -> list[int]:
        return [i for i, s in enumerate(self.daily_stats) if s is not None]

    @property
    def quarterly_dropped(self) -> list[int]:
        return [i for i, s in enumerate(self.quarterly_stats) if s is None]

    @property
    def daily_dropped(self) -> list[int]:
        return [i for i, s in enumerate(self.daily_stats) if s is None]

    @property
    def eps_stats(self) -> StudentizeStats:
        stats = self.quarterly_stats[self.config.eps_index]
        if stats is None:
            raise ZeroVarianceError("EPS feature has zero variance on the training pool")
        return stats

    @property
    def n_quarterly_features(self) -> int:
        return len(self.quarterly_kept)

    @property
    def n_daily_features(self) -> int:
        return len(self.daily_kept)

    def to_dict(self) -> dict:
        def stats(seq):
            return [None if s is None else {"mean": s.mean, "std": s.std} for s in seq]

        cfg = asdict(self.config)
        cfg["percentiles"] = list(cfg["percentiles"])
        cfg["unscaled_indices"] = list(cfg["unscaled_indices"])
        return {
            "config": cfg,
            "clip_bounds": {"lower": self.clip_bounds.lower, "upper": self.clip_bounds.upper},
            "quarterly_stats": stats(self.quarterly_stats),
            "daily_stats": stats(self.daily_stats),
            "quarterly_dropped": self.quarterly_dropped,
            "daily_dropped": self.daily_dropped,
            "quarterly_names": list(self.quarterly_names),
            "daily_names": list(self.daily_names),
            "cutoff": None if self.cutoff is None else self.cutoff.isoformat(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TransformSet":
        def stats(seq):
            return tuple(None if s is None else StudentizeStats(s["mean"], s["std"]) for s in seq)

        return cls(
            config=PreprocessConfig(**doc["config"]),
            clip_bounds=ClipBounds(**doc["clip_bounds"]),
            quarterly_stats=stats(doc["quarterly_stats"]),
            daily_stats=stats(doc["daily_stats"]),
            cutoff=None if doc.get("cutoff") is None else date.fromisoformat(doc["cutoff"]),
            quarterly_names=tuple(doc.get("quarterly_names", ())),
            daily_names=tuple(doc.get("daily_names", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TransformSet":
        return cls.from_dict(json.loads(text))


def _quarter_matrix(panel: FirmPanel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(features [n, f], eps [n], assets [n]) with nan for gaps."""
    def num(v):
        return np.nan if v is None else v

    feats = np.array([[num(v) for v in q.features] for q in panel.quarters], dtype=np.float64)
    eps = np.array([num(q.eps) for q in panel.quarters], dtype=np.float64)
    assets = np.array([num(q.total_assets) for q in panel.quarters], dtype=np.float64)
    return feats.reshape(len(panel.quarters), -1), eps, assets


def _daily_matrix(panel: FirmPanel) -> np.ndarray:
    rows = [[np.nan if v is None else v for v in d.features] for d in panel.days]
    return np.array(rows, dtype=np.float64).reshape(len(panel.days), -1)


def _scaled_quarters(feats: np.ndarray, assets: np.ndarray, config: PreprocessConfig,
                     bounds: ClipBounds) -> np.ndarray:
    out = feats.copy()
    divisor = np.maximum(1.0, assets)  # nan assets -> nan divisor -> gap
    scaled = [k for k in range(feats.shape[1]) if k not in config.unscaled_indices]
    out[:, scaled] = feats[:, scaled] / divisor[:, None]
    eps_col = out[:, config.eps_index]
    out[:, config.eps_index] = np.where(np.isnan(eps_col), np.nan, clip(eps_col, bounds))
    return out


def _fit_columns(pool: np.ndarray, names: Sequence[str], label: str) -> tuple[Optional[StudentizeStats], ...]:
    stats = []
    for k in range(pool.shape[1]):
        col = pool[:, k]
        col = col[~np.isnan(col)]
        try:
            stats.append(fit_studentize(col.tolist()))
        except ValueError:
            name = names[k] if k < len(names) else str(k)
            log.warning("dropping %s feature %s: zero variance on the training pool", label, name)
            stats.append(None)
    return tuple(stats)


def fit_pipeline(train_panels: Iterable[FirmPanel], config: PreprocessConfig = PreprocessConfig(),
                 cutoff: Optional[date] = None, quarterly_names: Sequence[str] = (),
                 daily_names: Sequence[str] = ()) -> TransformSet:
    """Fit clip bounds and studentization statistics.

    Only quarterly records reported on or before ``cutoff`` and daily records
    dated on or before it contribute.  Statistics use observed cells after
    scaling and clipping; interpolated cells never enter the pool.
    """
    panels = sorted(train_panels, key=lambda p: p.firm)
    if not panels:
        raise ValueError("fit_pipeline needs at least one training panel")

    def q_ok(d):
        return cutoff is None or d <= cutoff

    eps_pool = [q.eps for p in panels for q in p.quarters if q.eps is not None and q_ok(q.report_date)]
    if len(eps_pool) < 2:
        raise ValueError("fit_pipeline: fewer than two observed training EPS values")
    bounds = fit_clip_bounds(eps_pool, config.percentiles)

    q_blocks, d_blocks = [], []
    for p in panels:
        if p.quarters:
            keep = np.array([q_ok(q.report_date) for q in p.quarters])
            feats, _, assets = _quarter_matrix(p)
            q_blocks.append(_scaled_quarters(feats, assets, config, bounds)[keep])
        if p.days:
            keep = np.array([q_ok(d.date) for d in p.days])
            d_blocks.append(_daily_matrix(p)[keep])
    q_stats = _fit_columns(np.concatenate(q_blocks), quarterly_names, "quarterly")
    if q_stats[config.eps_index] is None:
        raise ZeroVarianceError("EPS feature has zero variance on the training pool")
    d_stats = _fit_columns(np.concatenate(d_blocks), daily_names, "daily") if d_blocks else ()
    return TransformSet(config, bounds, q_stats, d_stats, cutoff, tuple(quarterly_names), tuple(daily_names))


def _studentize_columns(block: np.ndarray, stats: Sequence[Optional[StudentizeStats]]) -> np.ndarray:
    kept = [k for k, s in enumerate(stats) if s is not None]
    means = np.array([stats[k].mean for k in kept])
    stds = np.array([stats[k].std for k in kept])
    return (block[:, kept] - means) / stds


def transform_eps(value: Optional[float], transforms: TransformSet) -> Optional[float]:
    """Clip then studentize a raw EPS figure (labels and analyst forecasts)."""
    if value is None:
        return None
    stats = transforms.eps_stats
    return (clip(float(value), transforms.clip_bounds) - stats.mean) / stats.std


def build_samples(panel: FirmPanel, transforms: TransformSet) -> list[Sample]:
    """Every (anchor t, label t+h) example the panel supports.

    A window needs ``F`` complete quarters ending at ``t`` after interpolation,
    an observed EPS at ``t+h`` and ``daily_steps`` complete trading days on or
    before the anchor date.
    """
    cfg = transforms.config
    F, h = cfg.window_size, cfg.horizon
    n = len(panel.quarters)
    if n < F + h or len(panel.days) < cfg.daily_steps:
        return []
    feats, eps, assets = _quarter_matrix(panel)
    scaled = fill_gaps(_scaled_quarters(feats, assets, cfg, transforms.clip_bounds), cfg.max_gap)
    quarters = _studentize_columns(scaled, transforms.quarterly_stats)
    q_complete = ~np.isnan(quarters).any(axis=1)
    eps_col = transforms.quarterly_kept.index(cfg.eps_index)

    daily = _studentize_columns(fill_gaps(_daily_matrix(panel), cfg.max_gap), transforms.daily_stats)
    d_complete = ~np.isnan(daily).any(axis=1)
    day_dates = [d.date for d in panel.days]

    # prefix counts make "window fully observed" an O(1) check
    q_bad = np.concatenate([[0], np.cumsum(~q_complete)])
    d_bad = np.concatenate([[0], np.cumsum(~d_complete)])

    samples = []
    for t in range(F - 1, n - h):
        if q_bad[t + 1] - q_bad[t + 1 - F]:
            continue
        if np.isnan(eps[t + h]):
            continue
        anchor = panel.quarters[t]
        end = bisect.bisect_right(day_dates, anchor.report_date)
        if end < cfg.daily_steps or d_bad[end] - d_bad[end - cfg.daily_steps]:
            continue
        window = quarters[t + 1 - F:t + 1]
        samples.append(Sample(
            firm=panel.firm,
            anchor_date=anchor.report_date,
            quarter_window=window,
            market_window=daily[end - cfg.daily_steps:end].reshape(-1),
            label=transform_eps(float(eps[t + h]), transforms),
            label_date=panel.quarters[t + h].report_date,
            persistent_prediction=float(window[-1, eps_col]),
            analyst_forecast=transform_eps(anchor.analyst_mean_eps, transforms),
            group=anchor.group,
        ))
    return samples


def build_all_samples(panels: Iterable[FirmPanel], transforms: TransformSet) -> list[Sample]:
    out: list[Sample] = []
    for p in sorted(panels, key=lambda p: p.firm):
        out.extend(build_samples(p, transforms))
    return out


@dataclass
class SampleArrays:
    """Column-stacked samples, the layout models and the sample store use."""

    quarters: np.ndarray
    market: np.ndarray
    labels: np.ndarray
    persistent: np.ndarray
    analyst: np.ndarray          # nan where no analyst consensus exists
    firms: np.ndarray
    anchor_dates: np.ndarray
    label_dates: np.ndarray
    groups: np.ndarray
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], window: int | None = None, n_quarterly: int | None = None,
                     market_dim: int | None = None) -> "SampleArrays":
        if samples:
            quarters = np.stack([s.quarter_window for s in samples])
            market = np.stack([s.market_window for s in samples])
        else:
            quarters = np.zeros((0, window or 0, n_quarterly or 0))
            market = np.zeros((0, market_dim or 0))
        return cls(
            quarters=quarters,
            market=market,
            labels=np.array([s.label for s in samples], dtype=np.float64),
            persistent=np.array([s.persistent_prediction for s in samples], dtype=np.float64),
            analyst=np.array([np.nan if s.analyst_forecast is None else s.analyst_forecast for s in samples],
                             dtype=np.float64),
            firms=np.array([s.firm for s in samples], dtype=str),
            anchor_dates=np.array([s.anchor_date.isoformat() for s in samples], dtype=str),
            label_dates=np.array([s.label_date.isoformat() for s in samples], dtype=str),
            groups=np.array([s.group.value for s in samples], dtype=str),
        )

    def subset(self, index) -> "SampleArrays":
        return SampleArrays(self.quarters[index], self.market[index], self.labels[index], self.persistent[index],
                            self.analyst[index], self.firms[index], self.anchor_dates[index],
                            self.label_dates[index], self.groups[index])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, quarters=self.quarters, market=self.market, labels=self.labels,
                     persistent=self.persistent, analyst=self.analyst, firms=self.firms,
                     anchor_dates=self.anchor_dates, label_dates=self.label_dates, groups=self.groups)

    @classmethod
    def load(cls, path) -> "SampleArrays":
        with np.load(path, allow_pickle=False) as z:
            return cls(**{k: z[k] for k in ("quarters", "market", "labels", "persistent", "analyst", "firms",
                                            "anchor_dates", "label_dates", "groups")})
