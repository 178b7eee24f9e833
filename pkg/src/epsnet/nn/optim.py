from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass(eq=False)
class Parameter:
    """A trainable tensor plus its Adam moment estimates."""

    name: str
    tensor: Tensor
    adam_m: np.ndarray = field(default=None)  # type: ignore[assignment]
    adam_v: np.ndarray = field(default=None)  # type: ignore[assignment]
    step_count: int = 0

    def __post_init__(self):
        self.tensor.requires_grad = True
        self.tensor.name = self.name
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.tensor.data)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.tensor.data)
        if self.adam_m.shape != self.tensor.shape or self.adam_v.shape != self.tensor.shape:
            raise ValueError(f"Adam state shape mismatch for {self.name}")

    @classmethod
    def from_array(cls, name: str, array: np.ndarray) -> "Parameter":
        return cls(name, Tensor(np.array(array), requires_grad=True))

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    def zero_grad(self) -> None:
        self.tensor.grad = None


class MissingGradientError(RuntimeError):
    pass


def adam_step(params: list[Parameter], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> None:
    """One bias-corrected Adam update on every parameter; clears gradients afterwards."""
    for p in params:
        if p.grad is None:
            raise MissingGradientError(f"parameter {p.name!r} has no gradient")
    for p in params:
        g = p.grad
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1 ** t)
        v_hat = p.adam_v / (1.0 - beta2 ** t)
        p.tensor.data -= lr * m_hat / (np.sqrt(v_hat) + epsilon)
        p.zero_grad()


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def step(self, params: list[Parameter]) -> None:
        adam_step(params, self.lr, self.beta1, self.beta2, self.epsilon)
