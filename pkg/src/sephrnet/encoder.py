"""HRNet-lite multi-resolution frame encoder.

Layout, for branches ``[1, 2, 3]``::

    1x1 projection -> stem (k x k) x stem_depth
    stage 1: branch 0 block
    stage 2: + branch 1 (strided k x k from branch 0); blocks; fusion
    stage 3: + branch 2 (strided k x k from branch 1); blocks; fusion
    resample every branch to the coarsest extent, concatenate, pool, project

Branch ``i`` runs at ``H / 2**i``. Fusion sums, for every target branch, the
resampled maps of all branches (strided conv to go down, 1x1 conv plus
nearest upsampling to go up), followed by ReLU. The first
``shallow_separable_depth`` k x k layers in forward order are spatially
separable.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, avg_pool2d, concat, relu, upsample_nearest2d
from .exceptions import ConfigurationError
from .nn import BatchNorm, Conv, Linear, Module


@dataclass
class EncoderConfig:
    in_channels: int = 4
    input_size: Tuple[int, int] = (32, 32)
    stem_channels: int = 16
    stem_depth: int = 2
    n_stages: int = 3
    branches_per_stage: Tuple[int, ...] = (1, 2, 3)
    channels_per_branch: Tuple[int, ...] = (16, 32, 64)
    shallow_separable_depth: int = 2
    kernel: int = 3
    embed_dim: int = 128
    n_heads: int = 3
    pool: str = "grid"
    pool_extent: int = 4
    residual: bool = False

    def __post_init__(self):
        self.input_size = tuple(self.input_size)
        self.branches_per_stage = tuple(self.branches_per_stage)
        self.channels_per_branch = tuple(self.channels_per_branch)

    @property
    def n_branches(self) -> int:
        return self.branches_per_stage[-1]

    @property
    def spatial_layer_count(self) -> int:
        """Number of k x k layers eligible for the separable swap."""
        return self.stem_depth + sum(self.branches_per_stage) + (self.n_branches - 1)

    @property
    def coarse_extent(self) -> Tuple[int, int]:
        f = 2 ** (self.n_branches - 1)
        return self.input_size[0] // f, self.input_size[1] // f

    @property
    def head_out(self) -> int:
        """Output width of each head's linear map (per grid cell for ``pool='grid'``)."""
        if self.pool == "grid":
            return self.embed_dim // (self.pool_extent**2)
        return self.embed_dim

    @property
    def feature_dim(self) -> int:
        c = sum(self.channels_per_branch[: self.n_branches])
        if self.pool in ("avg", "grid"):
            return c
        return c * self.pool_extent * self.pool_extent

    def validate(self) -> None:
        b = self.branches_per_stage
        if self.n_stages < 1 or len(b) != self.n_stages:
            raise ConfigurationError(f"n_stages={self.n_stages} but branches_per_stage={list(b)}")
        if b[0] < 1 or any(x > y for x, y in zip(b, b[1:])):
            raise ConfigurationError(f"branches_per_stage must start >= 1 and never decrease, got {list(b)}")
        if len(self.channels_per_branch) < self.n_branches:
            raise ConfigurationError(
                f"{self.n_branches} branches need {self.n_branches} channel counts, got {list(self.channels_per_branch)}"
            )
        if self.stem_depth < 0:
            raise ConfigurationError("stem_depth must be >= 0")
        if not 0 <= self.shallow_separable_depth <= self.spatial_layer_count:
            raise ConfigurationError(
                f"shallow_separable_depth={self.shallow_separable_depth} outside [0, {self.spatial_layer_count}]"
            )
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigurationError(f"kernel must be odd and positive, got {self.kernel}")
        if self.embed_dim < 1 or self.n_heads < 1:
            raise ConfigurationError("embed_dim and n_heads must be positive")
        f = 2 ** (self.n_branches - 1)
        h, w = self.input_size
        if h % f or w % f:
            raise ConfigurationError(
                f"input extent {h}x{w} is not divisible by 2**{self.n_branches - 1}={f} required by {self.n_branches} branches"
            )
        if self.pool not in ("avg", "flatten", "grid"):
            raise ConfigurationError(f"pool must be 'avg', 'flatten' or 'grid', got {self.pool!r}")
        if self.pool == "grid" and self.embed_dim % (self.pool_extent**2):
            raise ConfigurationError(
                f"grid pooling needs embed_dim divisible by pool_extent^2={self.pool_extent**2}, got {self.embed_dim}"
            )
        if self.pool in ("flatten", "grid"):
            ch, cw = self.coarse_extent
            pe = self.pool_extent
            if pe < 1 or ch % pe or cw % pe or ch != cw:
                raise ConfigurationError(f"pool_extent {pe} must divide the square coarse extent {ch}x{cw}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


class FrameEmbedding(NamedTuple):
    q: Tensor
    k: Tensor
    v: Tensor


class ConvBlock(Module):
    """conv -> batch norm -> optional ReLU, with an identity shortcut when asked.

    The shortcut only applies when input and output shapes agree and adds no
    parameters.
    """

    def __init__(self, rng, cin, cout, kernel, stride=1, padding=None, separable=False, act=True, residual=False):
        self.conv = Conv(rng, cin, cout, kernel, stride, padding, separable=separable)
        self.bn = BatchNorm(cout)
        self.act = act
        self.residual = residual and cin == cout and stride == 1

    def __call__(self, x: Tensor) -> Tensor:
        y = self.bn(self.conv(x))
        if self.residual:
            y = y + x
        return relu(y) if self.act else y


class Fusion(Module):
    """Resample-and-sum exchange between all branches of a stage."""

    def __init__(self, rng, channels: Sequence[int]):
        self.n = len(channels)
        self.paths: List[Optional[ConvBlock]] = []
        for j in range(self.n):
            for i in range(self.n):
                if i < j:
                    f = 2 ** (j - i)
                    self.paths.append(ConvBlock(rng, channels[i], channels[j], f, stride=f, padding=0, act=False))
                elif i > j:
                    self.paths.append(ConvBlock(rng, channels[i], channels[j], 1, padding=0, act=False))
                else:
                    self.paths.append(None)

    def __call__(self, xs: List[Tensor]) -> List[Tensor]:
        out = []
        for j in range(self.n):
            total = None
            for i in range(self.n):
                path = self.paths[j * self.n + i]
                if path is None:
                    y = xs[i]
                else:
                    y = path(xs[i])
                    if i > j:
                        y = upsample_nearest2d(y, 2 ** (i - j))
                total = y if total is None else total + y
            out.append(relu(total))
        return out


class Stage(Module):
    def __init__(self, rng, in_channels: Sequence[int], channels: Sequence[int], n_branches: int, cfg, sep_flags):
        k = cfg.kernel
        self.transitions = []
        prev = list(in_channels)
        for j in range(len(prev), n_branches):
            self.transitions.append(ConvBlock(rng, prev[-1], prev[-1], k, stride=2, separable=next(sep_flags)))
            prev.append(prev[-1])
        self.blocks = [
            ConvBlock(rng, prev[j], channels[j], k, separable=next(sep_flags), residual=cfg.residual)
            for j in range(n_branches)
        ]
        self.fusion = Fusion(rng, channels[:n_branches]) if n_branches > 1 else None

    def __call__(self, xs: List[Tensor]) -> List[Tensor]:
        xs = list(xs)
        for t in self.transitions:
            xs.append(t(xs[-1]))
        xs = [block(x) for block, x in zip(self.blocks, xs)]
        return self.fusion(xs) if self.fusion is not None else xs


class Encoder(Module):
    """Maps ``M×C×H×W`` frames to ``n_heads`` tensors of shape ``M×d_k``."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        k = cfg.kernel
        sep = iter([i < cfg.shallow_separable_depth for i in range(cfg.spatial_layer_count)])
        self.inproj = ConvBlock(rng, cfg.in_channels, cfg.stem_channels, 1, padding=0)
        self.stem = [
            ConvBlock(rng, cfg.stem_channels, cfg.stem_channels, k, separable=next(sep), residual=cfg.residual)
            for _ in range(cfg.stem_depth)
        ]
        self.stages = []
        chans = [cfg.stem_channels]
        for s, nb in enumerate(cfg.branches_per_stage):
            stage = Stage(rng, chans, cfg.channels_per_branch, nb, cfg, sep)
            self.stages.append(stage)
            chans = list(cfg.channels_per_branch[:nb])
        self.heads = [Linear(rng, cfg.feature_dim, cfg.head_out) for _ in range(cfg.n_heads)]

    def features(self, x: Tensor) -> List[List[Tensor]]:
        """Branch feature maps after every stage (for introspection)."""
        h = self.inproj(x)
        for layer in self.stem:
            h = layer(h)
        xs = [h]
        per_stage = []
        for stage in self.stages:
            xs = stage(xs)
            per_stage.append(xs)
        return per_stage

    def pooled(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        xs = self.features(x)[-1]
        last = len(xs) - 1
        maps = [avg_pool2d(m, 2 ** (last - i)) for i, m in enumerate(xs)]
        h = concat(maps, axis=1) if len(maps) > 1 else maps[0]
        if cfg.pool == "avg":
            return h.mean(axis=(2, 3))
        h = avg_pool2d(h, cfg.coarse_extent[0] // cfg.pool_extent)
        if cfg.pool == "grid":
            return h.transpose(0, 2, 3, 1)  # M×P×P×C, one feature vector per cell
        return h.reshape(h.shape[0], -1)

    def __call__(self, x: Tensor) -> List[Tensor]:
        single = x.ndim == 3
        if single:
            x = x.reshape((1,) + x.shape)
        if x.shape[1] != self.cfg.in_channels:
            raise ConfigurationError(f"frame has {x.shape[1]} channels, encoder expects {self.cfg.in_channels}")
        if tuple(x.shape[2:]) != self.cfg.input_size:
            raise ConfigurationError(f"frame extent {tuple(x.shape[2:])} != configured {self.cfg.input_size}")
        feat = self.pooled(x)
        outs = [head(feat) for head in self.heads]
        if self.cfg.pool == "grid":
            # M×P×P×c -> M×(c·P·P), channel-major like the decoder seed
            outs = [o.transpose(0, 3, 1, 2).reshape(o.shape[0], -1) for o in outs]
        if single:
            outs = [o.reshape(o.shape[1:]) for o in outs]
        return outs


def build_encoder(cfg: EncoderConfig, seed: int = 0) -> Encoder:
    return Encoder(cfg, np.random.default_rng(seed))


def encode(enc: Encoder, frame: Tensor) -> FrameEmbedding:
    """(q, k, v) for one frame or a batch; single-head encoders repeat their vector."""
    outs = enc(frame)
    if len(outs) >= 3:
        return FrameEmbedding(outs[0], outs[1], outs[2])
    return FrameEmbedding(outs[0], outs[0], outs[0])


def param_count(enc: Module) -> int:
    return enc.param_count()


def conv_weight_count(cin: int, cout: int, k: int, separable: bool, mid: Optional[int] = None) -> int:
    if separable:
        mid = cout if mid is None else mid
        return k * cin * mid + k * mid * cout
    return k * k * cin * cout


def closed_form_param_count(cfg: EncoderConfig) -> int:
    """Parameter count of :class:`Encoder` recomputed layer by layer from ``cfg``."""
    cfg.validate()
    k = cfg.kernel
    flags = [i < cfg.shallow_separable_depth for i in range(cfg.spatial_layer_count)]
    idx = 0
    total = 0

    def block(cin, cout, kk, sep=False):
        return conv_weight_count(cin, cout, kk, sep) + 2 * cout

    total += block(cfg.in_channels, cfg.stem_channels, 1)
    for _ in range(cfg.stem_depth):
        total += block(cfg.stem_channels, cfg.stem_channels, k, flags[idx])
        idx += 1
    chans = [cfg.stem_channels]
    for nb in cfg.branches_per_stage:
        prev = list(chans)
        while len(prev) < nb:
            total += block(prev[-1], prev[-1], k, flags[idx])
            idx += 1
            prev.append(prev[-1])
        for j in range(nb):
            total += block(prev[j], cfg.channels_per_branch[j], k, flags[idx])
            idx += 1
        if nb > 1:
            c = cfg.channels_per_branch
            for j in range(nb):
                for i in range(nb):
                    if i < j:
                        total += block(c[i], c[j], 2 ** (j - i))
                    elif i > j:
                        total += block(c[i], c[j], 1)
        chans = list(cfg.channels_per_branch[:nb])
    total += cfg.n_heads * (cfg.feature_dim * cfg.head_out + cfg.head_out)
    return total


def separable_saving(cfg: EncoderConfig) -> int:
    """Weights saved by the separable swap: sum of (k^2 - 2k)*C_in*C_out over converted layers.

    Exact when every converted layer maps C channels to C channels (the
    middle width equals C_out), which holds for the default layout.
    """
    k = cfg.kernel
    shapes = spatial_layer_shapes(cfg)
    return sum((k * k - 2 * k) * cin * cout for cin, cout in shapes[: cfg.shallow_separable_depth])


def spatial_layer_shapes(cfg: EncoderConfig) -> List[Tuple[int, int]]:
    """(C_in, C_out) of every k x k layer in forward order."""
    shapes = [(cfg.stem_channels, cfg.stem_channels)] * cfg.stem_depth
    chans = [cfg.stem_channels]
    for nb in cfg.branches_per_stage:
        prev = list(chans)
        while len(prev) < nb:
            shapes.append((prev[-1], prev[-1]))
            prev.append(prev[-1])
        shapes.extend((prev[j], cfg.channels_per_branch[j]) for j in range(nb))
        chans = list(cfg.channels_per_branch[:nb])
    return shapes
