"""Experiment configuration: one JSON document with a section per pipeline stage."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from datetime import date
from pathlib import Path
from typing import Any

from .domain import GroupFilter, SplitSpec
from .ingest import SchemaConfig, SyntheticConfig
from .models import KINDS, ArchitectureSpec
from .preprocess import PreprocessConfig
from .train import TrainConfig

RUN_ROOT_ENV = "EPSNET_RUN_ROOT"
DATASETS = ("A", "B")

PROFILES: dict[str, dict[str, Any]] = {
    "desk": {
        "synthetic": {"n_firms": 200, "n_quarters": 40, "ar_coefficient": 0.6, "seasonal_amplitude": 0.5},
        "train": {"epochs": 50, "repetitions": 3, "batch_size": 256},
    },
    "full": {
        "synthetic": {"n_firms": 200, "n_quarters": 40, "ar_coefficient": 0.6, "seasonal_amplitude": 0.5},
        "train": {"epochs": 1000, "repetitions": 5, "batch_size": 1024},
    },
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    run_dir: str = "runs/default"
    data_dir: str | None = None  # defaults to <run_dir>/data
    quarterly_file: str = "quarterly.csv"
    daily_file: str = "daily.csv"

    def resolved_run_dir(self) -> Path:
        run = Path(self.run_dir)
        if not run.is_absolute():
            run = Path(os.environ.get(RUN_ROOT_ENV, ".")) / run
        return run

    def resolved_data_dir(self) -> Path:
        if self.data_dir is None:
            return self.resolved_run_dir() / "data"
        data = Path(self.data_dir)
        if not data.is_absolute():
            data = Path(os.environ.get(RUN_ROOT_ENV, ".")) / data
        return data


def _default_splits() -> dict[str, SplitSpec]:
    a = SplitSpec(date(2012, 1, 1), date(2016, 12, 31), 0.10, 6)
    return {"A": a, "B": a.extended(6)}


@dataclass(frozen=True)
class RunConfig:
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    schema: SchemaConfig = field(default_factory=SchemaConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    architecture: dict[str, Any] = field(default_factory=lambda: {"kind": "lstm"})
    train: TrainConfig = field(default_factory=TrainConfig)
    splits: dict[str, SplitSpec] = field(default_factory=_default_splits)
    dataset: str = "B"
    group: str = "all"
    eval_groups: tuple[str, ...] = ("all", "nofin", "onlyfin")
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        if set(self.splits) != set(DATASETS):
            raise ConfigError(f"splits must define exactly {DATASETS}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}")
        GroupFilter(self.group)
        object.__setattr__(self, "eval_groups", tuple(self.eval_groups))
        for g in self.eval_groups:
            GroupFilter(g)
        if self.architecture.get("kind", "lstm") not in KINDS:
            raise ConfigError(f"architecture.kind must be one of {KINDS}")
        a, b = self.splits["A"], self.splits["B"]
        if b.train_label_start != a.train_label_start or b.train_label_end < a.test_end:
            raise ConfigError("split B must extend split A past A's test window")
        # architecture overrides must form a valid spec on their own
        self.architecture_spec(self.preprocess.window_size, len(self.schema.quarterly_features),
                               self.preprocess.daily_steps * len(self.schema.daily_features))

    def architecture_spec(self, window: int, n_quarterly: int, shares_dim: int, kind: str | None = None) -> ArchitectureSpec:
        d = copy.deepcopy(self.architecture)
        if kind is not None:
            d["kind"] = kind
        d["quarterly_shape"] = (window, n_quarterly)
        d["shares_flat_dim"] = shares_dim
        d.setdefault("dropout", self.train.dropout)
        try:
            return ArchitectureSpec.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"architecture: {exc}") from None

    def to_dict(self) -> dict[str, Any]:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, date):
        return obj.isoformat()
    if is_dataclass(obj):
        return _plain(asdict(obj))
    return obj


def _build(cls, section: dict[str, Any] | None, where: str):
    section = dict(section or {})
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _split(d: dict[str, Any], where: str) -> SplitSpec:
    d = dict(d)
    for k in ("train_label_start", "train_label_end"):
        if isinstance(d.get(k), str):
            d[k] = date.fromisoformat(d[k])
    return _build(SplitSpec, d, where)


def from_dict(doc: dict[str, Any]) -> RunConfig:
    """Validate every nested section; raises :class:`ConfigError` on any violation."""
    doc = dict(doc)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, cls in (("synthetic", SyntheticConfig), ("schema", SchemaConfig), ("preprocess", PreprocessConfig),
                      ("train", TrainConfig), ("paths", PathsConfig)):
        if name in doc:
            kwargs[name] = _build(cls, doc[name], name)
    if "splits" in doc:
        splits = _default_splits()
        for key, value in doc["splits"].items():
            if key not in DATASETS:
                raise ConfigError(f"splits: unknown dataset {key!r}")
            base = _plain(asdict(splits[key]))
            base.update(value)
            splits[key] = _split(base, f"splits.{key}")
        kwargs["splits"] = splits
    for name in ("architecture", "dataset", "group", "eval_groups"):
        if name in doc:
            kwargs[name] = doc[name]
    try:
        return RunConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "architecture":
            out[k] = _merge(out[k], v)
        elif isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str) -> tuple[list[str], Any]:
    """``"train.epochs=3"`` -> (["train", "epochs"], 3); values parse as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    path, raw = item.split("=", 1)
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return keys, value


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    doc = copy.deepcopy(doc)
    for item in overrides:
        keys, value = parse_override(item)
        node = doc
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {k} is not a section")
        node[keys[-1]] = value
    return doc


def load_config(path: str | os.PathLike | None = None, profile: str = "desk", overrides: list[str] = (),
                seed: int | None = None) -> RunConfig:
    """Profile defaults, then the JSON file, then ``--set`` overrides, then ``--seed``."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    doc = copy.deepcopy(PROFILES[profile])
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                doc = _merge(doc, json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    doc = apply_overrides(doc, list(overrides))
    if seed is not None:
        doc = _merge(doc, {"train": {"seed": seed}, "synthetic": {"seed": seed}})
    return from_dict(doc)
