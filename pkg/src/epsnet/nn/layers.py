"""Layers needed by the two forecasting architectures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, concat, getitem, matmul, mean, mul, relu, sigmoid, square, stack, tanh

ACTIVATIONS = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "linear": lambda x: x,
}


def activate(x: Tensor, name: str) -> Tensor:
    try:
        return ACTIVATIONS[name](x)
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int,
                   dtype=np.float64) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def dense(x: Tensor, weights: Tensor, bias: Tensor, activation: str = "tanh") -> Tensor:
    """``act(x @ W + b)`` for ``x`` of shape ``[batch, in]``."""
    if x.shape[-1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ValueError(f"dense shape mismatch: x{x.shape} W{weights.shape} b{bias.shape}")
    return activate(add(matmul(x, weights), bias), activation)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity outside training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    return mul(x, dropout_mask(x.shape, rate, rng, x.dtype))


def dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator, dtype) -> np.ndarray:
    keep = rng.random(shape, dtype=np.float32) >= rate
    return (keep / (1.0 - rate)).astype(dtype)


# LSTM

@dataclass(frozen=True)
class LstmLayerSpec:
    input_dim: int
    hidden_dim: int
    return_sequence: bool = False
    recurrent_dropout: float = 0.0

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ValueError("LSTM dims must be positive")
        if not 0.0 <= self.recurrent_dropout < 1.0:
            raise ValueError("recurrent_dropout must be in [0, 1)")

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        h4 = 4 * self.hidden_dim
        return {
            "kernel": (self.input_dim, h4),
            "recurrent_kernel": (self.hidden_dim, h4),
            "bias": (h4,),
        }

    def init_parameters(self, rng: np.random.Generator, dtype=np.float64) -> dict[str, np.ndarray]:
        h = self.hidden_dim
        bias = np.zeros(4 * h, dtype=dtype)
        bias[h:2 * h] = 1.0  # forget gate
        return {
            "kernel": glorot_uniform(rng, (self.input_dim, 4 * h), self.input_dim, 4 * h, dtype),
            "recurrent_kernel": glorot_uniform(rng, (h, 4 * h), h, 4 * h, dtype),
            "bias": bias,
        }


def lstm_forward(x: Tensor, spec: LstmLayerSpec, params: dict[str, Tensor], training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
    """Run one LSTM layer over ``x`` of shape ``[batch, T, input_dim]``.

    Gate columns are laid out as (input, forget, output, candidate).  The
    input projection ``x_t @ kernel`` and the recurrent projection
    ``h_{t-1} @ recurrent_kernel`` together equal ``[x_t; h_{t-1}] @ W``.
    Recurrent dropout uses one mask per sequence, shared by every step.
    """
    if x.data.ndim != 3 or x.shape[2] != spec.input_dim or x.shape[1] < 1:
        raise ValueError(f"lstm expects [batch, T>=1, {spec.input_dim}], got {x.shape}")
    batch, steps, _ = x.shape
    hd = spec.hidden_dim
    kernel, recurrent, bias = params["kernel"], params["recurrent_kernel"], params["bias"]

    projected = add(matmul(x, kernel), bias)
    mask = None
    if training and spec.recurrent_dropout > 0.0:
        if rng is None:
            raise ValueError("training-mode recurrent dropout needs an rng")
        mask = dropout_mask((batch, hd), spec.recurrent_dropout, rng, x.dtype)

    h = Tensor(np.zeros((batch, hd), dtype=x.dtype))
    c = Tensor(np.zeros((batch, hd), dtype=x.dtype))
    outputs = []
    for t in range(steps):
        h_in = mul(h, mask) if mask is not None else h
        z = add(getitem(projected, (slice(None), t)), matmul(h_in, recurrent))
        gates = sigmoid(getitem(z, (slice(None), slice(0, 3 * hd))))
        candidate = tanh(getitem(z, (slice(None), slice(3 * hd, 4 * hd))))
        i = getitem(gates, (slice(None), slice(0, hd)))
        f = getitem(gates, (slice(None), slice(hd, 2 * hd)))
        o = getitem(gates, (slice(None), slice(2 * hd, 3 * hd)))
        c = add(mul(f, c), mul(i, candidate))
        h = mul(o, tanh(c))
        if spec.return_sequence:
            outputs.append(h)
    if spec.return_sequence:
        return stack(outputs, axis=1)
    return h


# dilated causal convolution / TCN

def causal_conv1d(x: Tensor, kernel: Tensor, dilation: int = 1) -> Tensor:
    """Dilated causal convolution, ``[batch, T, c_in] -> [batch, T, c_out]``.

    ``out[t] = sum_j in[t - (k-1-j)*d] @ kernel[j]`` with zero left padding.
    """
    if dilation < 1:
        raise ValueError("dilation must be positive")
    if x.data.ndim != 3 or kernel.data.ndim != 3 or x.shape[2] != kernel.shape[1]:
        raise ValueError(f"causal_conv1d shape mismatch: x{x.shape} kernel{kernel.shape}")
    k = kernel.shape[0]
    steps = x.shape[1]
    pad = (k - 1) * dilation
    xp = np.pad(x.data, ((0, 0), (pad, 0), (0, 0))) if pad else x.data
    w = kernel.data
    out = xp[:, 0:steps] @ w[0]
    for j in range(1, k):
        out = out + xp[:, j * dilation:j * dilation + steps] @ w[j]

    def backward(g):
        gx = gk = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j * dilation:j * dilation + steps] += g @ w[j].T
            gx = gxp[:, pad:]
        if kernel.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            gk = np.stack([
                xp[:, j * dilation:j * dilation + steps].reshape(-1, xp.shape[-1]).T @ g2
                for j in range(k)
            ])
        return gx, gk

    return Tensor._make(out, (x, kernel), backward)


@dataclass(frozen=True)
class TcnSpec:
    filters: int = 32
    kernel: int = 3
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    dropout: float = 0.0
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.filters < 1 or self.kernel < 1:
            raise ValueError("TCN filters and kernel must be positive")
        if not self.dilations or any(d != 2 ** i for i, d in enumerate(self.dilations)):
            raise ValueError(f"dilations must be 1, 2, 4, ... (2**i), got {list(self.dilations)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("TCN dropout must be in [0, 1)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def receptive_field(self) -> int:
        """``1 + (k-1) * sum(d)``: the reach of one convolution per dilation.

        This is the figure the window-coverage check uses.  Each residual block
        stacks two convolutions, so the exact reach of the stack is
        :attr:`effective_receptive_field`, which is never smaller.
        """
        return 1 + (self.kernel - 1) * sum(self.dilations)

    @property
    def effective_receptive_field(self) -> int:
        """Number of past steps (including the current one) that can move an output."""
        return 1 + 2 * (self.kernel - 1) * sum(self.dilations)

    def parameter_shapes(self, in_channels: int) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        c_in = in_channels
        f, k = self.filters, self.kernel
        for i, _ in enumerate(self.dilations):
            shapes[f"block{i}.conv1.kernel"] = (k, c_in, f)
            shapes[f"block{i}.conv1.bias"] = (f,)
            shapes[f"block{i}.conv2.kernel"] = (k, f, f)
            shapes[f"block{i}.conv2.bias"] = (f,)
            if c_in != f:
                shapes[f"block{i}.skip.kernel"] = (1, c_in, f)
                shapes[f"block{i}.skip.bias"] = (f,)
            c_in = f
        return shapes

    def init_parameters(self, in_channels: int, rng: np.random.Generator, dtype=np.float64) -> dict[str, np.ndarray]:
        params = {}
        for name, shape in self.parameter_shapes(in_channels).items():
            if name.endswith("bias"):
                params[name] = np.zeros(shape, dtype=dtype)
            else:
                k, c_in, c_out = shape
                params[name] = glorot_uniform(rng, shape, k * c_in, k * c_out, dtype)
        return params


def tcn_forward(x: Tensor, spec: TcnSpec, params: dict[str, Tensor], training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
    """Residual stack of dilated causal convolutions, one block per dilation."""
    if x.data.ndim != 3:
        raise ValueError(f"tcn expects [batch, T, channels], got {x.shape}")
    out = x
    for i, d in enumerate(spec.dilations):
        p = f"block{i}."
        if p + "conv1.kernel" not in params:
            raise ValueError(f"missing TCN parameters for block {i}")
        h = activate(add(causal_conv1d(out, params[p + "conv1.kernel"], d), params[p + "conv1.bias"]), spec.activation)
        h = dropout(h, spec.dropout, training, rng)
        h = activate(add(causal_conv1d(h, params[p + "conv2.kernel"], d), params[p + "conv2.bias"]), spec.activation)
        h = dropout(h, spec.dropout, training, rng)
        if p + "skip.kernel" in params:
            residual = add(causal_conv1d(out, params[p + "skip.kernel"], 1), params[p + "skip.bias"])
        else:
            residual = out
        out = activate(add(h, residual), spec.activation)
    return out


# loss

def mse_loss(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=pred.dtype)
    if pred.data.size != target.size:
        raise ValueError(f"mse_loss length mismatch: {pred.data.size} vs {target.size}")
    diff = add(pred, -target.reshape(pred.shape))
    return mean(square(diff))


def merge(tensors: list[Tensor]) -> Tensor:
    """Concatenating merge along the feature axis."""
    return concat(tensors, axis=-1)


__all__ = [
    "LstmLayerSpec",
    "TcnSpec",
    "activate",
    "causal_conv1d",
    "dense",
    "dropout",
    "dropout_mask",
    "glorot_uniform",
    "lstm_forward",
    "merge",
    "mse_loss",
    "tcn_forward",
]
