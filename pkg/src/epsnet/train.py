"""Mini-batch Adam/MSE training with best-validation-epoch selection."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .models import ArchitectureSpec, ModelGraph, build_model, predict
from .nn import Adam, Checkpoint, mse_loss
from .nn.checkpoint import precision_dtype
from .preprocess import SampleArrays

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    epochs: int = 1000
    dropout: float = 0.3
    repetitions: int = 5
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    precision: str = "f32"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.repetitions < 1:
            raise ValueError("batch_size, epochs and repetitions must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be f32 or f64")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")

    @property
    def dtype(self):
        return precision_dtype(self.precision)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    validation_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_validation_loss: float = math.inf

    def record(self, train_loss: float, validation_loss: float) -> bool:
        """Append one epoch; True when it is a new best (earliest epoch wins ties)."""
        self.train_loss.append(float(train_loss))
        self.validation_loss.append(float(validation_loss))
        if validation_loss < self.best_validation_loss:
            self.best_validation_loss = float(validation_loss)
            self.best_epoch = len(self.validation_loss) - 1
            return True
        return False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        return cls(list(d["train_loss"]), list(d["validation_loss"]), int(d["best_epoch"]),
                   float(d["best_validation_loss"]))


def validation_mse(model: ModelGraph, data: SampleArrays, batch_size: int = 1024) -> float:
    model.eval()
    pred = predict(model, data, batch_size)
    return float(np.mean((pred - data.labels) ** 2))


def train_model(model: ModelGraph, train: SampleArrays, validation: SampleArrays, config: TrainConfig,
                seed: int | None = None) -> tuple[Checkpoint, TrainHistory]:
    """Train for ``config.epochs`` and return the best-validation snapshot.

    The returned checkpoint holds the parameters of the best validation epoch,
    never the final ones; ``model`` itself is left at the final epoch.
    """
    if len(train) == 0 or len(validation) == 0:
        raise ValueError("train_model needs non-empty train and validation sets")
    if model.dtype != np.dtype(config.dtype):
        raise ValueError(f"model precision {model.precision} != config precision {config.precision}")
    seed = config.seed if seed is None else seed
    optimizer = Adam(config.lr, config.beta1, config.beta2, config.epsilon)
    params = model.parameters()
    history = TrainHistory()
    best_state = model.state()
    labels = train.labels.astype(model.dtype)
    n = len(train)

    for epoch in range(config.epochs):
        order = np.random.default_rng([seed, epoch, 0]).permutation(n)
        drop_rng = np.random.default_rng([seed, epoch, 1])
        model.train()
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            out = model.forward(train.quarters[idx], train.market[idx], drop_rng)
            loss = mse_loss(out, labels[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingAborted(epoch, b, value)
            loss.backward()
            optimizer.step(params)
            total += value * len(idx)
        val = validation_mse(model, validation, config.batch_size)
        if not math.isfinite(val):
            raise TrainingAborted(epoch, -1, val)
        if history.record(total / n, val):
            best_state = model.state()
        log.debug("epoch %d train %.6f validation %.6f", epoch, total / n, val)

    meta = {
        "seed": seed,
        "best_epoch": history.best_epoch,
        "best_validation_loss": history.best_validation_loss,
    }
    return model.to_checkpoint(meta, best_state), history


@dataclass
class RunResult:
    repetition: int
    seed: int
    checkpoint: Checkpoint | None
    history: TrainHistory | None
    error: str | None = None
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.error is None


def _run_one(spec: ArchitectureSpec, train: SampleArrays, validation: SampleArrays, config: TrainConfig,
             repetition: int) -> RunResult:
    seed = config.seed + repetition
    started = time.perf_counter()
    model = build_model(spec, seed, config.dtype)
    try:
        ckpt, history = train_model(model, train, validation, config, seed)
    except TrainingAborted as exc:
        log.error("repetition %d aborted: %s", repetition, exc)
        return RunResult(repetition, seed, None, None, str(exc), time.perf_counter() - started)
    return RunResult(repetition, seed, ckpt, history, None, time.perf_counter() - started)


def run_repetitions(spec: ArchitectureSpec, train: SampleArrays, validation: SampleArrays, config: TrainConfig,
                    jobs: int = 1) -> list[RunResult]:
    """Independent runs with seeds ``config.seed + r``, ordered by repetition.

    A run that aborts is reported in its result; the remaining runs continue.
    """
    spec = replace(spec, dropout=config.dropout)
    reps = range(config.repetitions)
    if jobs <= 1 or config.repetitions == 1:
        return [_run_one(spec, train, validation, config, r) for r in reps]
    with ProcessPoolExecutor(max_workers=min(jobs, config.repetitions)) as pool:
        futures = [pool.submit(_run_one, spec, train, validation, config, r) for r in reps]
        return [f.result() for f in futures]


def successful(results: Sequence[RunResult]) -> list[RunResult]:
    return [r for r in results if r.ok]
