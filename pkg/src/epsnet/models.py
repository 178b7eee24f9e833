"""The two dual-input EPS architectures: LSTM tower or TCN tower plus a shares tower."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from .domain import Sample
from .nn import Checkpoint, LstmLayerSpec, Parameter, TcnSpec, Tensor, dense, dropout, lstm_forward, merge, tcn_forward
from .nn.checkpoint import precision_dtype, precision_of
from .nn.layers import glorot_uniform
from .preprocess import SampleArrays

KINDS = ("lstm", "tcn")


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: str = "lstm"
    quarterly_shape: tuple[int, int] = (20, 19)
    shares_flat_dim: int = 220
    shares_tower_dims: tuple[int, ...] = (660, 440, 220)
    head_dims: tuple[int, ...] = (19, 8, 1)
    lstm_dims: tuple[int, int] = (76, 38)
    tcn: TcnSpec = field(default_factory=TcnSpec)
    post_tcn_dense: int = 38
    dropout: float = 0.3

    def __post_init__(self):
        for name in ("quarterly_shape", "shares_tower_dims", "head_dims", "lstm_dims"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if isinstance(self.tcn, dict):
            object.__setattr__(self, "tcn", TcnSpec(**self.tcn))
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if len(self.quarterly_shape) != 2 or min(self.quarterly_shape) < 1:
            raise ValueError("quarterly_shape must be (window, features) with positive entries")
        if self.shares_flat_dim < 1 or not self.shares_tower_dims or min(self.shares_tower_dims) < 1:
            raise ValueError("shares tower dims must be positive")
        if not self.head_dims or min(self.head_dims) < 1 or self.head_dims[-1] != 1:
            raise ValueError("head must end in a single output unit")
        if len(self.lstm_dims) != 2 or min(self.lstm_dims) < 1:
            raise ValueError("lstm_dims must hold two positive hidden sizes")
        if self.post_tcn_dense < 1:
            raise ValueError("post_tcn_dense must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.kind == "tcn" and self.tcn.receptive_field < self.quarterly_shape[0]:
            raise ValueError(f"TCN receptive field {self.tcn.receptive_field} < window {self.quarterly_shape[0]}")

    @property
    def quarter_tower_dim(self) -> int:
        return self.lstm_dims[1] if self.kind == "lstm" else self.post_tcn_dense

    @property
    def merge_dim(self) -> int:
        return self.quarter_tower_dim + self.shares_tower_dims[-1]

    @property
    def fingerprint(self) -> str:
        w, f = self.quarterly_shape
        parts = [
            self.kind,
            f"quarters={w}x{f}",
            f"shares={self.shares_flat_dim}",
            "tower=" + ",".join(map(str, self.shares_tower_dims)),
            "head=" + ",".join(map(str, self.head_dims)),
        ]
        if self.kind == "lstm":
            parts.append("lstm=" + ",".join(map(str, self.lstm_dims)))
        else:
            t = self.tcn
            parts += [f"tcn=f{t.filters}k{t.kernel}", "dilations=" + ",".join(map(str, t.dilations)),
                      f"tcn_act={t.activation}", f"post_tcn={self.post_tcn_dense}"]
        return "|".join(parts)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for k, v in list(d.items()):
            if isinstance(v, tuple):
                d[k] = list(v)
        d["tcn"]["dilations"] = list(self.tcn.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ArchitectureSpec":
        d = dict(d)
        if "tcn" in d and isinstance(d["tcn"], dict):
            d["tcn"] = TcnSpec(**d["tcn"])
        return cls(**d)

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        """Parameter name -> shape, in initialisation order."""
        window, n_feat = self.quarterly_shape
        shapes: dict[str, tuple[int, ...]] = {}
        if self.kind == "lstm":
            in_dim = n_feat
            for i, hidden in enumerate(self.lstm_dims, start=1):
                for name, shape in LstmLayerSpec(in_dim, hidden).parameter_shapes().items():
                    shapes[f"lstm{i}.{name}"] = shape
                in_dim = hidden
        else:
            for name, shape in self.tcn.parameter_shapes(n_feat).items():
                shapes[f"tcn.{name}"] = shape
            shapes["post_tcn.weights"] = (self.tcn.filters, self.post_tcn_dense)
            shapes["post_tcn.bias"] = (self.post_tcn_dense,)
        in_dim = self.shares_flat_dim
        for i, out in enumerate(self.shares_tower_dims):
            shapes[f"shares{i}.weights"] = (in_dim, out)
            shapes[f"shares{i}.bias"] = (out,)
            in_dim = out
        in_dim = self.merge_dim
        for i, out in enumerate(self.head_dims):
            shapes[f"head{i}.weights"] = (in_dim, out)
            shapes[f"head{i}.bias"] = (out,)
            in_dim = out
        return shapes


def parameter_count(spec: ArchitectureSpec) -> int:
    """Closed-form trainable-parameter count."""
    window, n_feat = spec.quarterly_shape

    def dense_count(dims, in_dim):
        total = 0
        for out in dims:
            total += out * (in_dim + 1)
            in_dim = out
        return total

    if spec.kind == "lstm":
        h1, h2 = spec.lstm_dims
        total = 4 * h1 * (n_feat + h1 + 1) + 4 * h2 * (h1 + h2 + 1)
    else:
        f, k = spec.tcn.filters, spec.tcn.kernel
        total = 0
        c_in = n_feat
        for _ in spec.tcn.dilations:
            total += k * c_in * f + f + k * f * f + f
            if c_in != f:
                total += c_in * f + f
            c_in = f
        total += dense_count([spec.post_tcn_dense], f)
    total += dense_count(spec.shares_tower_dims, spec.shares_flat_dim)
    total += dense_count(spec.head_dims, spec.merge_dim)
    return total


class ModelGraph:
    """A built network with named parameters and a train/eval mode flag."""

    def __init__(self, spec: ArchitectureSpec, params: dict[str, Parameter], dtype=np.float64):
        self.spec = spec
        self.params = params
        self.dtype = np.dtype(dtype)
        self.mode = "eval"
        expected = spec.layer_shapes()
        actual = {name: p.shape for name, p in params.items()}
        if actual != expected:
            raise ValueError("parameter shapes do not match the architecture spec")

    @property
    def fingerprint(self) -> str:
        return self.spec.fingerprint

    @property
    def precision(self) -> str:
        return precision_of(self.dtype)

    def train(self) -> "ModelGraph":
        self.mode = "train"
        return self

    def eval(self) -> "ModelGraph":
        self.mode = "eval"
        return self

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise ValueError("state does not match model parameters")
        for name, p in self.params.items():
            if arrays[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}")
            p.tensor.data[...] = arrays[name]

    def to_checkpoint(self, metadata: dict | None = None, arrays: dict[str, np.ndarray] | None = None) -> Checkpoint:
        meta = {"spec": self.spec.to_dict()}
        meta.update(metadata or {})
        return Checkpoint(self.fingerprint, self.precision, arrays if arrays is not None else self.state(), meta)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "ModelGraph":
        spec = ArchitectureSpec.from_dict(ckpt.metadata["spec"])
        if spec.fingerprint != ckpt.fingerprint:
            raise ValueError(f"architecture fingerprint mismatch: {ckpt.fingerprint!r} vs {spec.fingerprint!r}")
        dtype = precision_dtype(ckpt.precision)
        params = {name: Parameter.from_array(name, ckpt.arrays[name].astype(dtype)) for name in spec.layer_shapes()}
        return cls(spec, params, dtype)

    def forward(self, quarters, shares, rng: np.random.Generator | None = None) -> Tensor:
        """Network output of shape ``[batch, 1]``."""
        spec = self.spec
        training = self.mode == "train"
        rate = spec.dropout
        q = Tensor(np.asarray(quarters, dtype=self.dtype))
        s = Tensor(np.asarray(shares, dtype=self.dtype))
        window, n_feat = spec.quarterly_shape
        if q.data.ndim != 3 or q.shape[1:] != (window, n_feat):
            raise ValueError(f"quarters must be [batch, {window}, {n_feat}], got {q.shape}")
        if s.data.ndim != 2 or s.shape[1] != spec.shares_flat_dim or s.shape[0] != q.shape[0]:
            raise ValueError(f"shares must be [batch, {spec.shares_flat_dim}], got {s.shape}")
        P = {name: p.tensor for name, p in self.params.items()}

        if spec.kind == "lstm":
            h1, h2 = spec.lstm_dims
            l1 = LstmLayerSpec(n_feat, h1, return_sequence=True, recurrent_dropout=rate)
            l2 = LstmLayerSpec(h1, h2, return_sequence=False, recurrent_dropout=rate)
            x = lstm_forward(q, l1, _prefixed(P, "lstm1."), training, rng)
            x = dropout(x, rate, training, rng)
            x = lstm_forward(x, l2, _prefixed(P, "lstm2."), training, rng)
            quarter_out = dropout(x, rate, training, rng)
        else:
            tcn = replace(spec.tcn, dropout=rate)
            x = tcn_forward(q, tcn, _prefixed(P, "tcn."), training, rng)
            x = x[:, -1, :]
            x = dense(x, P["post_tcn.weights"], P["post_tcn.bias"], "tanh")
            quarter_out = dropout(x, rate, training, rng)

        y = s
        for i in range(len(spec.shares_tower_dims)):
            y = dense(y, P[f"shares{i}.weights"], P[f"shares{i}.bias"], "tanh")
            y = dropout(y, rate, training, rng)

        z = merge([quarter_out, y])
        last = len(spec.head_dims) - 1
        for i in range(len(spec.head_dims)):
            z = dense(z, P[f"head{i}.weights"], P[f"head{i}.bias"], "linear" if i == last else "tanh")
            if i != last:
                z = dropout(z, rate, training, rng)
        return z


def _prefixed(params: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    n = len(prefix)
    return {name[n:]: t for name, t in params.items() if name.startswith(prefix)}


def build_model(spec: ArchitectureSpec, seed: int = 0, dtype=np.float64) -> ModelGraph:
    """Fresh model with Glorot-uniform weights, zero biases and LSTM forget bias 1."""
    rng = np.random.default_rng(seed)
    window, n_feat = spec.quarterly_shape
    arrays: dict[str, np.ndarray] = {}
    if spec.kind == "lstm":
        in_dim = n_feat
        for i, hidden in enumerate(spec.lstm_dims, start=1):
            for name, arr in LstmLayerSpec(in_dim, hidden).init_parameters(rng, dtype).items():
                arrays[f"lstm{i}.{name}"] = arr
            in_dim = hidden
    else:
        for name, arr in spec.tcn.init_parameters(n_feat, rng, dtype).items():
            arrays[f"tcn.{name}"] = arr
    for name, shape in spec.layer_shapes().items():
        if name in arrays:
            continue
        if name.endswith("bias"):
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            arrays[name] = glorot_uniform(rng, shape, shape[0], shape[1], dtype)
    params = {name: Parameter.from_array(name, arrays[name]) for name in spec.layer_shapes()}
    return ModelGraph(spec, params, dtype)


def _as_arrays(samples) -> SampleArrays:
    if isinstance(samples, SampleArrays):
        return samples
    return SampleArrays.from_samples(list(samples))


def predict(model: ModelGraph, samples: SampleArrays | Sequence[Sample], batch_size: int = 1024) -> np.ndarray:
    """Eval-mode predictions, one per sample, in input order."""
    data = _as_arrays(samples)
    if model.mode != "eval":
        raise ValueError("predict needs the model in eval mode")
    out = np.empty(len(data), dtype=np.float64)
    for start in range(0, len(data), batch_size):
        stop = min(start + batch_size, len(data))
        y = model.forward(data.quarters[start:stop], data.market[start:stop])
        out[start:stop] = y.data.reshape(-1)
    return out


Predictor = Callable[[SampleArrays], np.ndarray]
