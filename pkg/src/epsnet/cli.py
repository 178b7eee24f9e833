"""Command line entry point: ``epsnet synth|preprocess|train|evaluate|report``.

Run directory layout::

    config.json
    data/quarterly.csv, data/daily.csv, data/manifest.json
    preprocess/{A,B}/transforms.json, {train,validation,test}.npz, index.json
    train/<kind>/manifest.json, train/<kind>/rep_<r>/{checkpoint,history}.json
    reports/report.json, reports/report.txt
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path
from typing import Sequence

from .config import ConfigError, RunConfig, load_config
from .domain import InsufficientSamplesError, filter_group, filter_panels, split_temporal
from .evalcore import (EvalReport, NoComparableSamplesError, analyst_predictor, evaluate, persistent_predictor,
                       render_table)
from .ingest import MalformedRowError, SchemaError, generate_synthetic, load_panels, write_panels
from .models import KINDS
from .nn import Checkpoint
from .nn.checkpoint import CheckpointError, atomic_write_text
from .preprocess import SampleArrays, TransformSet, build_all_samples, fit_pipeline
from .train import TrainHistory, run_repetitions

log = logging.getLogger("epsnet")

PARTITIONS = ("train", "validation", "test")


class MissingArtifactError(FileNotFoundError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _atomic_replace(tmp_writer, path: Path) -> None:
    """Run ``tmp_writer(tmp_path)`` and move the result onto ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        tmp_writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing {what}: {path}")
    return path


class SampleStore:
    """Partitioned sample arrays plus the transform set, one folder per dataset variant.

    ``reads`` logs every (variant, partition) loaded, so callers can check
    which partitions a stage touched.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.reads: list[tuple[str, str]] = []

    def folder(self, variant: str) -> Path:
        return self.root / variant

    def write(self, variant: str, transforms: TransformSet, partitions: dict[str, SampleArrays],
              index: dict) -> None:
        folder = self.folder(variant)
        folder.mkdir(parents=True, exist_ok=True)
        atomic_write_text(folder / "transforms.json", transforms.to_json() + "\n")
        for name in PARTITIONS:
            _atomic_replace(lambda tmp, a=partitions[name]: a.save(tmp), folder / f"{name}.npz")
        atomic_write_text(folder / "index.json", _dump(index))

    def load(self, variant: str, partition: str) -> SampleArrays:
        if partition not in PARTITIONS:
            raise ValueError(f"unknown partition {partition!r}")
        path = _require(self.folder(variant) / f"{partition}.npz", f"{partition} partition (run preprocess first)")
        self.reads.append((variant, partition))
        return SampleArrays.load(path)

    def transforms(self, variant: str) -> TransformSet:
        path = _require(self.folder(variant) / "transforms.json", "transform set (run preprocess first)")
        return TransformSet.from_json(path.read_text(encoding="utf-8"))


class RunPaths:
    def __init__(self, config: RunConfig):
        self.root = config.paths.resolved_run_dir()
        self.data = config.paths.resolved_data_dir()
        self.quarterly = self.data / config.paths.quarterly_file
        self.daily = self.data / config.paths.daily_file
        self.preprocess = self.root / "preprocess"
        self.train = self.root / "train"
        self.reports = self.root / "reports"

    def kind_dir(self, kind: str) -> Path:
        return self.train / kind


def _snapshot_config(config: RunConfig, paths: RunPaths) -> None:
    paths.root.mkdir(parents=True, exist_ok=True)
    atomic_write_text(paths.root / "config.json", config.to_json() + "\n")


# subcommands

def cmd_synth(config: RunConfig, output_dir: str | os.PathLike | None = None) -> dict:
    """Generate the synthetic panel and write it in the ingest schema."""
    paths = RunPaths(config)
    out = Path(output_dir) if output_dir is not None else paths.data
    out.mkdir(parents=True, exist_ok=True)
    panels = generate_synthetic(config.synthetic)
    qpath, dpath = out / config.paths.quarterly_file, out / config.paths.daily_file
    with tempfile.TemporaryDirectory(dir=out) as tmp:
        tq, td = Path(tmp) / "q.csv", Path(tmp) / "d.csv"
        write_panels(panels, tq, td, config.schema)
        os.replace(tq, qpath)
        os.replace(td, dpath)
    manifest = {
        "generator": "synthetic AR(1) + seasonal panel",
        "seed": config.synthetic.seed,
        "synthetic": config.to_dict()["synthetic"],
        "files": {"quarterly": qpath.name, "daily": dpath.name},
        "n_firms": len(panels),
        "n_quarterly_rows": sum(len(p.quarters) for p in panels),
        "n_daily_rows": sum(len(p.days) for p in panels),
    }
    atomic_write_text(out / "manifest.json", _dump(manifest))
    print(f"synth: {len(panels)} firms -> {qpath}, {dpath}")
    return manifest


def cmd_preprocess(config: RunConfig, store: SampleStore | None = None) -> dict:
    """Fit transforms on each variant's training period and write the sample store."""
    paths = RunPaths(config)
    _require(paths.quarterly, "quarterly input file")
    _require(paths.daily, "daily input file")
    _snapshot_config(config, paths)
    store = store or SampleStore(paths.preprocess)
    panels = load_panels(paths.quarterly, paths.daily, config.schema)
    fit_panels = filter_panels(panels, config.group)
    if not fit_panels:
        raise InsufficientSamplesError(f"insufficient samples: no firms in group {config.group!r}")
    summary = {}
    for variant in ("A", "B"):
        spec = config.splits[variant]
        transforms = fit_pipeline(fit_panels, config.preprocess, spec.train_label_end,
                                  config.schema.quarterly_features, config.schema.daily_features)
        samples = build_all_samples(panels, transforms)
        split = split_temporal(filter_group(samples, config.group), spec)
        # the test partition keeps every group; evaluation selects cohorts
        test = split_temporal(samples, spec).test
        dims = dict(window=config.preprocess.window_size, n_quarterly=transforms.n_quarterly_features,
                    market_dim=config.preprocess.daily_steps * transforms.n_daily_features)
        parts = {"train": SampleArrays.from_samples(split.train, **dims),
                 "validation": SampleArrays.from_samples(split.validation, **dims),
                 "test": SampleArrays.from_samples(test, **dims)}
        index = {
            "variant": variant,
            "group": config.group,
            "split": {"train_label_start": spec.train_label_start.isoformat(),
                      "train_label_end": spec.train_label_end.isoformat(),
                      "test_end": spec.test_end.isoformat(),
                      "validation_fraction": spec.validation_fraction},
            "counts": {k: len(v) for k, v in parts.items()},
            "quarterly_dropped": [config.schema.quarterly_features[k] for k in transforms.quarterly_dropped],
            "daily_dropped": [config.schema.daily_features[k] for k in transforms.daily_dropped],
        }
        store.write(variant, transforms, parts, index)
        summary[variant] = index["counts"]
        print(f"preprocess {variant}: " + " ".join(f"{k}={n}" for k, n in index["counts"].items()))
    return summary


def _architecture(config: RunConfig, store: SampleStore, kind: str | None):
    transforms = store.transforms(config.dataset)
    return config.architecture_spec(config.preprocess.window_size, transforms.n_quarterly_features,
                                    config.preprocess.daily_steps * transforms.n_daily_features, kind)


def cmd_train(config: RunConfig, kind: str | None = None, jobs: int = 1, store: SampleStore | None = None) -> dict:
    """Train ``repetitions`` models of one kind; only train/<kind> is rewritten."""
    paths = RunPaths(config)
    store = store or SampleStore(paths.preprocess)
    spec = _architecture(config, store, kind)
    train = store.load(config.dataset, "train")
    validation = store.load(config.dataset, "validation")
    _snapshot_config(config, paths)

    started = time.time()
    results = run_repetitions(spec, train, validation, config.train, jobs)
    finished = time.time()

    kind_dir = paths.kind_dir(spec.kind)
    if kind_dir.exists():
        shutil.rmtree(kind_dir)
    runs = []
    for res in results:
        rep_dir = kind_dir / f"rep_{res.repetition}"
        rep_dir.mkdir(parents=True, exist_ok=True)
        entry = {"repetition": res.repetition, "seed": res.seed, "seconds": round(res.seconds, 3),
                 "error": res.error, "checkpoint": None}
        if res.ok:
            res.checkpoint.save(rep_dir / "checkpoint.json")
            atomic_write_text(rep_dir / "history.json", _dump(res.history.to_dict()))
            entry.update(checkpoint=f"rep_{res.repetition}/checkpoint.json",
                         best_epoch=res.history.best_epoch,
                         best_validation_loss=res.history.best_validation_loss)
            print(f"train {spec.kind} rep {res.repetition}: seed {res.seed} best epoch {res.history.best_epoch} "
                  f"validation MSE {res.history.best_validation_loss:.6f} ({res.seconds:.1f}s)")
        else:
            print(f"train {spec.kind} rep {res.repetition}: seed {res.seed} ABORTED {res.error}")
        runs.append(entry)
    manifest = {
        "kind": spec.kind,
        "dataset": config.dataset,
        "fingerprint": spec.fingerprint,
        "architecture": spec.to_dict(),
        "train": config.to_dict()["train"],
        "jobs": jobs,
        "runs": runs,
        "started": started,
        "finished": finished,
    }
    atomic_write_text(kind_dir / "manifest.json", _dump(manifest))
    return manifest


def _trained_kinds(paths: RunPaths, kinds: Sequence[str] | None) -> list[str]:
    if kinds:
        return list(kinds)
    return [k for k in KINDS if (paths.kind_dir(k) / "manifest.json").exists()]


def _load_checkpoints(paths: RunPaths, kind: str) -> list[Checkpoint]:
    manifest_path = _require(paths.kind_dir(kind) / "manifest.json", f"training manifest for {kind}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    ckpts = []
    for run in manifest["runs"]:
        if run["checkpoint"] is None:
            continue
        path = _require(paths.kind_dir(kind) / run["checkpoint"], f"checkpoint for {kind}")
        ckpts.append(Checkpoint.load(path, manifest["fingerprint"]))
    if not ckpts:
        raise MissingArtifactError(f"no successful {kind} repetitions in {manifest_path}")
    return ckpts


def render_report(reports: Sequence[EvalReport]) -> str:
    """One table per group, in first-seen order."""
    groups: list[str] = []
    for r in reports:
        if r.group not in groups:
            groups.append(r.group)
    parts = []
    for g in groups:
        rows = [r for r in reports if r.group == g]
        parts.append(f"== group: {g} (test samples {rows[0].n_test_samples}, "
                     f"with analyst forecast {rows[0].n_with_analyst}) ==\n" + render_table(rows))
    return "\n".join(parts)


def cmd_evaluate(config: RunConfig, kinds: Sequence[str] | None = None, baselines: bool = True,
                 store: SampleStore | None = None) -> list[EvalReport]:
    paths = RunPaths(config)
    store = store or SampleStore(paths.preprocess)
    found = _trained_kinds(paths, kinds)
    if not found and not baselines:
        raise MissingArtifactError(f"no trained models under {paths.train}")
    checkpoints = {k: _load_checkpoints(paths, k) for k in found}
    test = store.load(config.dataset, "test")
    if len(test) == 0:
        raise InsufficientSamplesError("empty test partition")
    reports = []
    for group in config.eval_groups:
        for kind in found:
            reports.append(evaluate(checkpoints[kind], test, group, kind))
        if baselines:
            reports.append(evaluate([persistent_predictor], test, group, "persistent"))
            reports.append(evaluate([analyst_predictor], test, group, "analyst"))
    doc = {
        "dataset": config.dataset,
        "fingerprints": {k: checkpoints[k][0].fingerprint for k in found},
        "reports": [r.to_dict() for r in reports],
    }
    paths.reports.mkdir(parents=True, exist_ok=True)
    atomic_write_text(paths.reports / "report.json", _dump(doc))
    text = render_report(reports)
    atomic_write_text(paths.reports / "report.txt", text)
    print(text, end="")
    return reports


def cmd_report(config: RunConfig, report_path: str | os.PathLike | None = None) -> str:
    """Re-render an existing report JSON as text."""
    paths = RunPaths(config)
    path = Path(report_path) if report_path else paths.reports / "report.json"
    doc = json.loads(_require(path, "report").read_text(encoding="utf-8"))
    text = render_report([EvalReport.from_dict(d) for d in doc["reports"]])
    atomic_write_text(path.with_suffix(".txt"), text)
    print(text, end="")
    return text


# argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--profile", choices=["desk", "full"], default="desk", help="default settings profile")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path override, e.g. train.epochs=3 (repeatable)")
    common.add_argument("--seed", type=int, help="seed for generation and training")
    common.add_argument("--run-dir", help="run directory (overrides paths.run_dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="epsnet", description="EPS forecasting with LSTM and TCN networks.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="generate the synthetic panel")
    p.add_argument("--out", help="output directory (default: <run-dir>/data)")
    sub.add_parser("preprocess", parents=[common], help="fit transforms and build the sample store")
    p = sub.add_parser("train", parents=[common], help="train repetitions of one architecture")
    p.add_argument("--kind", choices=KINDS, help="architecture (default: architecture.kind)")
    p.add_argument("--jobs", type=int, default=1, help="parallel repetitions")
    p = sub.add_parser("evaluate", parents=[common], help="score trained models on the test split")
    p.add_argument("--kind", choices=KINDS, action="append", help="restrict to these architectures")
    p = sub.add_parser("report", parents=[common], help="re-render a report JSON as a table")
    p.add_argument("--report", help="report JSON (default: <run-dir>/reports/report.json)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.run_dir:
        overrides.append(f"paths.run_dir={json.dumps(args.run_dir)}")
    try:
        config = load_config(args.config, args.profile, overrides, args.seed)
        if args.command == "synth":
            cmd_synth(config, args.out)
        elif args.command == "preprocess":
            cmd_preprocess(config)
        elif args.command == "train":
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            manifest = cmd_train(config, args.kind, args.jobs)
            if any(r["error"] for r in manifest["runs"]):
                return 1
        elif args.command == "evaluate":
            cmd_evaluate(config, args.kind)
        else:
            cmd_report(config, args.report)
    except ConfigError as exc:
        print(f"epsnet: config error: {exc}", file=sys.stderr)
        return 2
    except (SchemaError, MalformedRowError, MissingArtifactError, CheckpointError, InsufficientSamplesError,
            NoComparableSamplesError, ValueError, OSError) as exc:
        print(f"epsnet: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
