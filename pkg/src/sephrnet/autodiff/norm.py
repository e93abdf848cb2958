"""Batch normalization and the pixel-wise cross-entropy loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..exceptions import ConfigurationError, DataError, UninitializedStatsError
from .tensor import Tensor, _node

LOG_FLOOR = 1e-12


@dataclass
class RunningStats:
    """Per-channel running mean/variance; ``None`` until the first train-mode pass."""

    mean: Optional[np.ndarray] = None
    var: Optional[np.ndarray] = None
    momentum: float = 0.1


def _channel_axes(ndim: int) -> tuple:
    if ndim == 2:
        return (0,)
    if ndim == 4:
        return (0, 2, 3)
    raise ConfigurationError(f"batch_norm expects N×C or N×C×H×W input, got rank {ndim}")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: RunningStats,
    training: bool = True,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize over every axis except the channel axis (axis 1).

    In training mode the batch moments are used and ``stats`` is updated with
    momentum (unbiased variance, as is customary); in eval mode the running
    moments are used.
    """
    axes = _channel_axes(x.ndim)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ConfigurationError(f"batch_norm over {c} channels got gamma {gamma.shape}, beta {beta.shape}")
    bshape = (1, c) + (1,) * (x.ndim - 2)

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        count = x.size // c
        m = stats.momentum
        unbiased = var * count / max(count - 1, 1)
        if stats.mean is None:
            stats.mean = mu.copy()
            stats.var = unbiased.copy()
        else:
            stats.mean = (1 - m) * stats.mean + m * mu
            stats.var = (1 - m) * stats.var + m * unbiased
    else:
        if stats.mean is None:
            raise UninitializedStatsError("batch_norm in eval mode before any running statistics were recorded")
        mu, var = stats.mean, stats.var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def backward(g):
        gg = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(bshape)
            if training:
                n = x.size // c
                gx = (inv_std.reshape(bshape) / n) * (
                    n * gxhat
                    - gxhat.sum(axis=axes).reshape(bshape)
                    - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape)
                )
            else:
                gx = gxhat * inv_std.reshape(bshape)
        return gx, gg, gbeta

    return _node(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over pixels of ``-log p(true class)`` with ``log`` floored at 1e-12.

    ``logits`` is ``K×H×W`` or ``N×K×H×W``; ``labels`` is ``H×W`` or ``N×H×W``.
    """
    labels = np.asarray(labels)
    single = logits.ndim == 3
    z = logits.data[None] if single else logits.data
    y = labels[None] if single else labels
    if z.ndim != 4:
        raise ConfigurationError(f"logits must be K×H×W or N×K×H×W, got {logits.shape}")
    k = z.shape[1]
    if y.shape != (z.shape[0],) + z.shape[2:]:
        raise ConfigurationError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise DataError("labels must be integers")
        y = y.astype(np.int64)
    bad = (y < 0) | (y >= k)
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        where = pos[1:] if single else pos
        raise DataError(f"label {int(y[pos])} at pixel {where} outside [0, {k})")

    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp_true = np.take_along_axis(logp, y[:, None], axis=1)[:, 0]
    floor = np.log(LOG_FLOOR)
    clipped = logp_true < floor
    count = y.size
    loss = -np.maximum(logp_true, floor).sum() / count

    def backward(g):
        probs = np.exp(logp)
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, y[:, None], 1.0, axis=1)
        grad = (probs - onehot) * (g / count)
        if clipped.any():
            grad = grad * (~clipped)[:, None]
        return (grad[0] if single else grad,)

    return _node(np.asarray(loss, dtype=z.dtype), (logits,), backward)
