"""MSE, skill scores against the persistent model and analysts, and report rendering."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .domain import GroupFilter, Group, Sample
from .models import ModelGraph, predict
from .nn import Checkpoint
from .preprocess import SampleArrays


class DegenerateBaselineError(ValueError):
    pass


class NoComparableSamplesError(ValueError):
    pass


def persistent_predict(sample: Sample) -> float:
    return sample.persistent_prediction


def mse(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.size != y.size:
        raise ValueError(f"mse length mismatch: {p.size} vs {y.size}")
    if p.size == 0:
        raise ValueError("mse of zero samples")
    d = p - y
    return float(np.mean(d * d))


def skill_score(mse_model: float, mse_base: float) -> float:
    """``1 - mse_model / mse_base``; positive means better than the baseline."""
    if not mse_base > 0:
        raise DegenerateBaselineError("degenerate baseline: baseline MSE is zero, skill score undefined")
    return 1.0 - mse_model / mse_base


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@dataclass
class EvalReport:
    group: str
    model: str
    n_test_samples: int
    n_with_analyst: int
    mse_model: list[float]
    mse_persistent: float
    mse_analyst: float
    ss_vs_persistent: Optional[list[float]]
    ss_vs_analyst: Optional[list[float]]
    errors: list[str] = field(default_factory=list)
    space: str = "studentized EPS (shared affine transform; skill scores equal raw-space values)"

    @property
    def mse_mean_std(self) -> tuple[float, float]:
        return _mean_std(self.mse_model)

    @property
    def ss_vs_persistent_mean_std(self) -> Optional[tuple[float, float]]:
        return None if self.ss_vs_persistent is None else _mean_std(self.ss_vs_persistent)

    @property
    def ss_vs_analyst_mean_std(self) -> Optional[tuple[float, float]]:
        return None if self.ss_vs_analyst is None else _mean_std(self.ss_vs_analyst)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["summary"] = {
            "mse": list(self.mse_mean_std),
            "ss_vs_persistent": None if self.ss_vs_persistent is None else list(self.ss_vs_persistent_mean_std),
            "ss_vs_analyst": None if self.ss_vs_analyst is None else list(self.ss_vs_analyst_mean_std),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = {k: v for k, v in d.items() if k != "summary"}
        return cls(**d)


PredictorLike = Union[ModelGraph, Checkpoint, Callable[[SampleArrays], np.ndarray]]


def _predictions(predictor: PredictorLike, data: SampleArrays) -> np.ndarray:
    if isinstance(predictor, Checkpoint):
        predictor = ModelGraph.from_checkpoint(predictor)
    if isinstance(predictor, ModelGraph):
        return predict(predictor.eval(), data)
    return np.asarray(predictor(data), dtype=np.float64).reshape(-1)


def persistent_predictor(data: SampleArrays) -> np.ndarray:
    return data.persistent.copy()


def analyst_predictor(data: SampleArrays) -> np.ndarray:
    return data.analyst.copy()


def select_group(data: SampleArrays, group: GroupFilter | str) -> SampleArrays:
    group = GroupFilter(group)
    if group is GroupFilter.ALL:
        return data
    wanted = Group.NONFINANCIAL if group is GroupFilter.NOFIN else Group.FINANCIAL
    return data.subset(data.groups == wanted.value)


def evaluate(predictors: Sequence[PredictorLike], test: SampleArrays | Sequence[Sample],
             group: GroupFilter | str = GroupFilter.ALL, model_name: str = "model") -> EvalReport:
    """Per-repetition model MSE and skill scores on the analyst-covered test subset.

    Persistent and analyst MSE are computed once on exactly the same subset.
    A zero baseline MSE leaves that skill score as ``None`` and records the
    error in the report; the other score is still produced.
    """
    if not predictors:
        raise ValueError("evaluate needs at least one predictor")
    data = test if isinstance(test, SampleArrays) else SampleArrays.from_samples(list(test))
    group = GroupFilter(group)
    data = select_group(data, group)
    n_total = len(data)
    covered = data.subset(~np.isnan(data.analyst))
    if len(covered) == 0:
        raise NoComparableSamplesError("no comparable samples: no test sample with an analyst forecast")

    mse_p = mse(covered.persistent, covered.labels)
    mse_a = mse(covered.analyst, covered.labels)
    model_mse = [mse(_predictions(p, covered), covered.labels) for p in predictors]

    errors = []
    ss_p: Optional[list[float]] = None
    ss_a: Optional[list[float]] = None
    try:
        ss_p = [skill_score(m, mse_p) for m in model_mse]
    except DegenerateBaselineError as exc:
        errors.append(f"ss_vs_persistent: {exc}")
    try:
        ss_a = [skill_score(m, mse_a) for m in model_mse]
    except DegenerateBaselineError as exc:
        errors.append(f"ss_vs_analyst: {exc}")
    return EvalReport(group.value, model_name, n_total, len(covered), model_mse, mse_p, mse_a, ss_p, ss_a, errors)


# rendering

def _pm(ms: Optional[tuple[float, float]], digits: int = 4) -> str:
    if ms is None:
        return "n/a"
    return f"{ms[0]:.{digits}f} ± {ms[1]:.{digits}f}"


def render_table(reports: Sequence[EvalReport]) -> str:
    """Aligned plain-text table, one row per (group, model)."""
    header = ["group", "model", "MSE", "SS vs persistent", "SS vs analyst", "n"]
    rows = [header]
    for r in reports:
        rows.append([r.group, r.model, _pm(r.mse_mean_std), _pm(r.ss_vs_persistent_mean_std),
                     _pm(r.ss_vs_analyst_mean_std), str(r.n_with_analyst)])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for k, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) if i < 2 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths))).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def reports_to_json(reports: Sequence[EvalReport]) -> str:
    return json.dumps({"reports": [r.to_dict() for r in reports]}, indent=1, sort_keys=True)


def reports_from_json(text: str) -> list[EvalReport]:
    return [EvalReport.from_dict(d) for d in json.loads(text)["reports"]]
