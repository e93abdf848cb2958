"""Temporal aggregation of per-frame embeddings: attention, LSTM, mean."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from .autodiff import Tensor, concat, matmul, sigmoid, softmax, stack, tanh
from .autodiff.tensor import as_tensor
from .exceptions import ConfigurationError, EmptySequenceError
from .nn import Linear, Module


@dataclass
class AttentionConfig:
    d_k: int = 128
    n_heads: int = 4
    positional: bool = True
    value_init: str = "identity"

    @property
    def d_h(self) -> int:
        return self.d_k // self.n_heads

    def validate(self) -> None:
        if self.n_heads < 1 or self.d_k < 1:
            raise ConfigurationError("d_k and n_heads must be positive")
        if self.d_k % self.n_heads:
            raise ConfigurationError(f"d_k={self.d_k} is not divisible by n_heads={self.n_heads}")


@dataclass
class LstmConfig:
    input_dim: int = 128
    hidden: int = 256
    layers: int = 3
    bidirectional: bool = True
    bias: bool = False
    output_dim: int = 128
    init: str = "normal"

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigurationError(f"LSTM needs at least one layer, got {self.layers}")
        if self.hidden < 1 or self.input_dim < 1:
            raise ConfigurationError("LSTM dimensions must be positive")
        if self.init not in ("normal", "identity"):
            raise ConfigurationError(f"unknown LSTM init {self.init!r}")
        if self.init == "identity" and not self.input_dim == self.hidden == self.output_dim:
            raise ConfigurationError(
                f"identity init needs input_dim == hidden == output_dim, got "
                f"{self.input_dim}, {self.hidden}, {self.output_dim}"
            )
        if self.bias:
            raise ConfigurationError("gate biases are not supported; the recurrent block is bias-free")


def attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """``softmax(q kᵀ / sqrt(d)) v`` with the softmax taken over keys.

    Works on ``T×d`` matrices or any batch of them (``...×T×d``).
    """
    if q.shape[-2] == 0:
        raise EmptySequenceError("attention over an empty sequence")
    if q.shape != k.shape or k.shape[:-1] != v.shape[:-1]:
        raise ConfigurationError(f"attention shapes disagree: Q {q.shape}, K {k.shape}, V {v.shape}")
    d = q.shape[-1]
    kt = k.transpose(tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    weights = softmax(matmul(q, kt) * (1.0 / math.sqrt(d)), axis=-1)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def sinusoidal_positions(t: int, d: int) -> np.ndarray:
    pos = np.arange(t)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class MultiHead(Module):
    """Per-head projections, scaled dot-product attention, FFN, sum over time."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        d = cfg.d_k
        self.w_q = Linear(rng, d, d, bias=False)
        self.w_k = Linear(rng, d, d, bias=False)
        # Value and output maps start at the identity so the attention block
        # initially passes per-cell features straight to the decoder seed.
        self.w_v = Linear(rng, d, d, bias=False, init=cfg.value_init)
        self.ffn = Linear(rng, d, d, init=cfg.value_init)

    def heads(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        """Concatenated head outputs, ``N×T×d_k``."""
        cfg = self.cfg
        n, t, d = q.shape
        if t == 0:
            raise EmptySequenceError("multi-head attention over an empty sequence")
        if cfg.positional:
            pe = Tensor(sinusoidal_positions(t, d).astype(q.dtype))
            q, k, v = q + pe, k + pe, v + pe

        def split(x: Tensor) -> Tensor:
            return x.reshape(n, t, cfg.n_heads, cfg.d_h).transpose(0, 2, 1, 3)

        out = attention(split(self.w_q(q)), split(self.w_k(k)), split(self.w_v(v)))
        return out.transpose(0, 2, 1, 3).reshape(n, t, d)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        single = q.ndim == 2
        if single:
            q, k, v = (x.reshape((1,) + x.shape) for x in (q, k, v))
        agg = self.ffn(self.heads(q, k, v)).sum(axis=1)
        return agg.reshape(agg.shape[1:]) if single else agg


def multi_head(seq: Tensor, mh: MultiHead) -> Tensor:
    """Self-attention aggregate of a ``T×d_k`` (or ``N×T×d_k``) sequence."""
    return mh(seq, seq, seq)


class Lstm(Module):
    """Stacked, optionally bidirectional LSTM without gate biases.

    Gates follow the usual order (input, forget, cell, output)::

        i = σ(W_i x + U_i h)   f = σ(W_f x + U_f h)
        g = tanh(W_g x + U_g h)   o = σ(W_o x + U_o h)
        c' = f c + i g         h' = o tanh(c')

    With ``init='identity'`` every unit starts as a leaky running sum of its
    own input feature: ``W_g`` is the identity on the first layer and averages
    the two directions on later ones, the output map averages the final
    forward and backward states, and all other weights start at zero (gates
    open halfway). Cross-feature mixing is then learned, not inherited from
    a random draw.
    """

    def __init__(self, cfg: LstmConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        dirs = 2 if cfg.bidirectional else 1
        self.cells = []
        for layer in range(cfg.layers):
            fin = cfg.input_dim if layer == 0 else dirs * cfg.hidden
            for _ in range(dirs):
                self.cells.append(_Cell(rng, fin, cfg.hidden))
        self.out = Linear(rng, dirs * cfg.hidden, cfg.output_dim, bias=False)
        if cfg.init == "identity":
            self._identity_init(dirs)

    def _identity_init(self, dirs: int) -> None:
        h = self.cfg.hidden
        merge = sum(np.eye(h, dirs * h, k=d * h) for d in range(dirs)) / dirs
        for i, cell in enumerate(self.cells):
            cell.wx.weight.data[...] = 0.0
            cell.wh.weight.data[...] = 0.0
            cell.wx.weight.data[2 * h : 3 * h] = np.eye(h) if i < dirs else merge
        self.out.weight.data[...] = merge

    def run(self, seq: Tensor) -> List[Tensor]:
        """Hidden states of the last layer per time step, ``N×(dirs·H)`` each."""
        cfg = self.cfg
        n, t, _ = seq.shape
        if t == 0:
            raise EmptySequenceError("LSTM over an empty sequence")
        dirs = 2 if cfg.bidirectional else 1
        steps = [seq[:, i, :] for i in range(t)]
        for layer in range(cfg.layers):
            outs = []
            for d in range(dirs):
                cell = self.cells[layer * dirs + d]
                order = range(t) if d == 0 else range(t - 1, -1, -1)
                h = c = Tensor(np.zeros((n, cfg.hidden), dtype=seq.dtype))
                hs = [None] * t
                for i in order:
                    h, c = cell(steps[i], h, c)
                    hs[i] = h
                outs.append(hs)
            steps = [concat([o[i] for o in outs], axis=1) if dirs > 1 else outs[0][i] for i in range(t)]
        self._last_layer = outs
        return steps

    def __call__(self, seq: Tensor) -> Tensor:
        single = seq.ndim == 2
        if single:
            seq = seq.reshape((1,) + seq.shape)
        self.run(seq)
        outs = self._last_layer
        t = seq.shape[1]
        # Forward direction ends at t-1, backward direction at 0.
        final = [outs[0][t - 1]] + ([outs[1][0]] if len(outs) > 1 else [])
        h = concat(final, axis=1) if len(final) > 1 else final[0]
        y = self.out(h)
        return y.reshape(y.shape[1:]) if single else y


class _Cell(Module):
    def __init__(self, rng: np.random.Generator, fin: int, hidden: int):
        self.wx = Linear(rng, fin, 4 * hidden, bias=False)
        self.wh = Linear(rng, hidden, 4 * hidden, bias=False)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor):
        hid = h.shape[1]
        z = self.wx(x) + self.wh(h)
        i = sigmoid(z[:, :hid])
        f = sigmoid(z[:, hid : 2 * hid])
        g = tanh(z[:, 2 * hid : 3 * hid])
        o = sigmoid(z[:, 3 * hid :])
        c = f * c + i * g
        return o * tanh(c), c


def lstm_aggregate(seq: Tensor, lstm: Lstm) -> Tensor:
    return lstm(seq)


def mean_aggregate(maps: Union[Sequence[Tensor], Tensor], axis: int = 0) -> Tensor:
    """Elementwise mean of equally shaped maps (a list, or stacked along ``axis``)."""
    if isinstance(maps, Tensor):
        if maps.shape[axis] == 0:
            raise EmptySequenceError("mean of zero maps")
        return maps.mean(axis=axis)
    maps = [as_tensor(m) for m in maps]
    if not maps:
        raise EmptySequenceError("mean of zero maps")
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ConfigurationError(f"maps differ in shape: {sorted({m.shape for m in maps})}")
    return stack(maps, axis=0).mean(axis=0)
