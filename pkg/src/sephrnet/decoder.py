"""Transposed-convolution decoder from an aggregated vector to a logit map.

The vector is reshaped to a ``seed_channels × seed_extent × seed_extent``
seed and passed through blocks of ``ReLU(BN(ConvTranspose(Z) + B))``; the last
block stops after the bias and emits raw class logits.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Tuple

import numpy as np

from .autodiff import Tensor, conv_transpose_output_size, relu
from .exceptions import ConfigurationError
from .nn import BatchNorm, ConvTranspose, Module

Block = Tuple[int, int, int, int]


@dataclass
class DecoderConfig:
    seed_channels: int = 8
    seed_extent: int = 4
    # (out_channels, kernel, stride, padding); the last block's channels are replaced by n_classes.
    blocks: List[Block] = field(default_factory=lambda: [(32, 4, 2, 1), (16, 4, 2, 1), (6, 4, 2, 1)])
    n_classes: int = 6
    target: Tuple[int, int] = (32, 32)

    def __post_init__(self):
        self.blocks = [tuple(int(v) for v in b) for b in self.blocks]
        self.target = tuple(self.target)

    @property
    def d_k(self) -> int:
        return self.seed_channels * self.seed_extent**2

    def extent_chain(self) -> List[int]:
        chain = [self.seed_extent]
        for _, k, s, p in self.blocks:
            chain.append(conv_transpose_output_size(chain[-1], k, s, p))
        return chain

    def validate(self) -> None:
        if not self.blocks:
            raise ConfigurationError("decoder needs at least one block")
        if self.n_classes < 2:
            raise ConfigurationError(f"n_classes must be >= 2, got {self.n_classes}")
        for b in self.blocks:
            if b[1] < 1 or b[2] < 1 or b[3] < 0 or b[0] < 1:
                raise ConfigurationError(f"invalid decoder block {b}")
        chain = self.extent_chain()
        h, w = self.target
        if h != w or chain[-1] != h or any(e <= 0 for e in chain):
            raise ConfigurationError(f"decoder extent chain {' -> '.join(map(str, chain))} does not reach target {h}x{w}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = [list(b) for b in self.blocks]
        d["target"] = list(self.target)
        return d


class Decoder(Module):
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.convs = []
        self.norms = []
        cin = cfg.seed_channels
        for idx, (cout, k, s, p) in enumerate(cfg.blocks):
            last = idx == len(cfg.blocks) - 1
            cout = cfg.n_classes if last else cout
            # a bias in front of batch norm is cancelled by the mean subtraction
            self.convs.append(ConvTranspose(rng, cin, cout, k, s, p, bias=last))
            if not last:
                self.norms.append(BatchNorm(cout))
            cin = cout

    def __call__(self, agg: Tensor) -> Tensor:
        cfg = self.cfg
        single = agg.ndim == 1
        if single:
            agg = agg.reshape(1, -1)
        if agg.shape[1] != cfg.d_k:
            raise ConfigurationError(f"decoder expects a {cfg.d_k}-vector, got width {agg.shape[1]}")
        x = agg.reshape(agg.shape[0], cfg.seed_channels, cfg.seed_extent, cfg.seed_extent)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.norms):
                x = relu(self.norms[i](x))
        return x.reshape(x.shape[1:]) if single else x


def build_decoder(cfg: DecoderConfig, seed: int = 0) -> Decoder:
    return Decoder(cfg, np.random.default_rng(seed))


def decode(dec: Decoder, agg: Tensor) -> Tensor:
    return dec(agg)


def argmax_labels(scores: np.ndarray, axis: int = 0) -> np.ndarray:
    """Class index per pixel; ``np.argmax`` already breaks ties toward the lowest index."""
    return np.argmax(scores, axis=axis).astype(np.int64)
