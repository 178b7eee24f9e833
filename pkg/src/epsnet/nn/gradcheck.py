from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .optim import Parameter
from .tensor import Tensor


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients from
    turning rounding noise into huge ratios."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor | Parameter], step: float = 1e-5,
               max_elements: int | None = None, rng: np.random.Generator | None = None,
               floor: float = 1e-6) -> float:
    """Worst relative error between backprop gradients and central differences.

    ``loss_fn`` rebuilds the graph from the current parameter values and returns
    a scalar.  With ``max_elements`` set, each parameter is probed at that many
    randomly chosen positions instead of every element.
    """
    tensors = [p.tensor if isinstance(p, Parameter) else p for p in params]
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check needs float64 parameters")
        t.requires_grad = True
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    if rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        if max_elements is None or max_elements >= flat.size:
            positions = np.arange(flat.size)
        else:
            positions = rng.choice(flat.size, size=max_elements, replace=False)
        for pos in positions:
            orig = flat[pos]
            flat[pos] = orig + step
            up = loss_fn().item()
            flat[pos] = orig - step
            down = loss_fn().item()
            flat[pos] = orig
            numeric = (up - down) / (2.0 * step)
            worst = max(worst, relative_error(float(grad.reshape(-1)[pos]), numeric, floor))
        t.grad = None
    return worst
