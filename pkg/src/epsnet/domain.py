"""Core record types, supervised samples, temporal splitting and group filtering."""

from __future__ import annotations

import calendar
import math
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

FirmId = str


class Group(str, Enum):
    FINANCIAL = "financial"
    NONFINANCIAL = "nonfinancial"

    @classmethod
    def parse(cls, value) -> "Group":
        if isinstance(value, Group):
            return value
        text = str(value).strip().lower()
        if text in ("financial", "fin", "1", "true", "yes"):
            return cls.FINANCIAL
        if text in ("nonfinancial", "nonfin", "0", "false", "no"):
            return cls.NONFINANCIAL
        raise ValueError(f"unrecognised group label {value!r}")


class GroupFilter(str, Enum):
    ALL = "all"
    NOFIN = "nofin"
    ONLYFIN = "onlyfin"


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class QuarterlyRecord:
    """One quarterly report.  ``None`` marks a missing cell."""

    firm: FirmId
    report_date: date
    eps: Optional[float]
    total_assets: Optional[float]
    features: tuple[Optional[float], ...]
    group: Group = Group.NONFINANCIAL
    analyst_mean_eps: Optional[float] = None

    def __post_init__(self):
        if not self.firm:
            raise ValueError("firm id must be non-empty")
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "group", Group.parse(self.group))
        if self.total_assets is not None and self.total_assets < 0:
            raise ValueError(f"{self.firm} {self.report_date}: total assets must be >= 0")


@dataclass(frozen=True)
class DailyRecord:
    firm: FirmId
    date: date
    features: tuple[Optional[float], ...]

    def __post_init__(self):
        if not self.firm:
            raise ValueError("firm id must be non-empty")
        object.__setattr__(self, "features", tuple(self.features))


@dataclass(frozen=True)
class FirmPanel:
    firm: FirmId
    quarters: tuple[QuarterlyRecord, ...]
    days: tuple[DailyRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "quarters", tuple(self.quarters))
        object.__setattr__(self, "days", tuple(self.days))
        for recs, attr in ((self.quarters, "report_date"), (self.days, "date")):
            for prev, cur in zip(recs, recs[1:]):
                if getattr(cur, attr) <= getattr(prev, attr):
                    raise ValueError(f"{self.firm}: records not strictly increasing at {getattr(cur, attr)}")
            if any(r.firm != self.firm for r in recs):
                raise ValueError(f"panel {self.firm} holds records of another firm")
        if self.quarters and len({len(q.features) for q in self.quarters}) != 1:
            raise ValueError(f"{self.firm}: inconsistent quarterly feature counts")
        if self.days and len({len(d.features) for d in self.days}) != 1:
            raise ValueError(f"{self.firm}: inconsistent daily feature counts")

    @property
    def group(self) -> Group:
        return self.quarters[-1].group if self.quarters else Group.NONFINANCIAL


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Sample:
    """One supervised example.

    ``quarter_window`` is ``[F, n_features]`` with the last row at the anchor
    quarter; ``market_window`` is the flattened ``[daily_steps, n_daily]`` block
    ending at the anchor date.  Label, persistent prediction and analyst
    forecast all live in the same transformed EPS space.
    """

    firm: FirmId
    anchor_date: date
    quarter_window: np.ndarray
    market_window: np.ndarray
    label: float
    label_date: date
    persistent_prediction: float
    analyst_forecast: Optional[float] = None
    group: Group = Group.NONFINANCIAL

    def __post_init__(self):
        object.__setattr__(self, "quarter_window", _frozen(self.quarter_window))
        object.__setattr__(self, "market_window", _frozen(self.market_window).reshape(-1))
        object.__setattr__(self, "group", Group.parse(self.group))
        if self.label_date <= self.anchor_date:
            raise ValueError("label_date must come after anchor_date")


@dataclass(frozen=True)
class SplitSpec:
    train_label_start: date
    train_label_end: date
    validation_fraction: float = 0.10
    test_months: int = 6

    def __post_init__(self):
        if not self.train_label_start < self.train_label_end:
            raise ValueError("train_label_start must precede train_label_end")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.test_months < 1:
            raise ValueError("test span must be at least one month")

    @property
    def test_end(self) -> date:
        return add_months(self.train_label_end, self.test_months)

    def extended(self, months: int) -> "SplitSpec":
        """Same split with the training period pushed ``months`` further."""
        return SplitSpec(self.train_label_start, add_months(self.train_label_end, months),
                         self.validation_fraction, self.test_months)


def add_months(d: date, months: int) -> date:
    """Calendar month shift; month-end dates stay at month end."""
    idx = d.year * 12 + d.month - 1 + months
    year, month = divmod(idx, 12)
    month += 1
    last = calendar.monthrange(year, month)[1]
    if d.day == calendar.monthrange(d.year, d.month)[1]:
        return date(year, month, last)
    return date(year, month, min(d.day, last))


@dataclass
class Split:
    train: list[Sample] = field(default_factory=list)
    validation: list[Sample] = field(default_factory=list)
    test: list[Sample] = field(default_factory=list)

    def __iter__(self):
        return iter((self.train, self.validation, self.test))


def _order_key(s: Sample):
    return (s.label_date, s.firm, s.anchor_date)


def split_temporal(samples: Sequence[Sample], spec: SplitSpec) -> Split:
    """Chronological train / validation / test partition by label date.

    Validation is the last ``ceil(fraction * n)`` of the training-period samples,
    ordered by label date with firm id breaking ties.
    """
    if not samples:
        raise InsufficientSamplesError("insufficient samples for split: no samples")
    pool = sorted((s for s in samples if spec.train_label_start <= s.label_date <= spec.train_label_end),
                  key=_order_key)
    test_end = spec.test_end
    test = sorted((s for s in samples if spec.train_label_end < s.label_date <= test_end), key=_order_key)
    n_val = math.ceil(round(spec.validation_fraction * len(pool), 9))
    train, validation = pool[:len(pool) - n_val], pool[len(pool) - n_val:]
    if not train or not test:
        raise InsufficientSamplesError(
            f"insufficient samples for split: train={len(train)} validation={len(validation)} test={len(test)}")
    return Split(train, validation, test)


def filter_group(samples: Iterable[Sample], mode: GroupFilter | str) -> list[Sample]:
    mode = GroupFilter(mode)
    if mode is GroupFilter.ALL:
        return list(samples)
    wanted = Group.NONFINANCIAL if mode is GroupFilter.NOFIN else Group.FINANCIAL
    return [s for s in samples if s.group is wanted]


def filter_panels(panels: Iterable[FirmPanel], mode: GroupFilter | str) -> list[FirmPanel]:
    mode = GroupFilter(mode)
    if mode is GroupFilter.ALL:
        return list(panels)
    wanted = Group.NONFINANCIAL if mode is GroupFilter.NOFIN else Group.FINANCIAL
    return [p for p in panels if p.group is wanted]
