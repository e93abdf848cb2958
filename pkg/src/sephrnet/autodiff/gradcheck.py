"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..exceptions import UsageError
from .tensor import Tensor


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    floor: float = 1e-6,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and numeric gradients.

    ``f`` is called as ``f(*inputs)`` and must return a scalar tensor. The
    relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    ``max_coords`` limits the check to a random subset per input.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise UsageError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    if out.size != 1:
        raise UsageError(f"grad_check needs a scalar-valued program, got output shape {out.shape}")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            plus = f(*inputs).item()
            flat[i] = orig - eps
            minus = f(*inputs).item()
            flat[i] = orig
            num = (plus - minus) / (2 * eps)
            ana = a.reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
    return float(worst)
