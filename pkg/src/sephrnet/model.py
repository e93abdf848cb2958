"""End-to-end segmentation network for the ED, ELD and ESD paradigms."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import Tensor, no_grad, softmax
from .decoder import Decoder, DecoderConfig
from .encoder import Encoder, EncoderConfig
from .exceptions import ConfigurationError
from .nn import Module
from .temporal import AttentionConfig, Lstm, LstmConfig, MultiHead, mean_aggregate

PARADIGMS = ("ed", "eld", "esd")


@dataclass
class ModelConfig:
    paradigm: str = "esd"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    lstm: LstmConfig = field(default_factory=lambda: LstmConfig(hidden=64, layers=3))
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def resolved(self) -> "ModelConfig":
        """Copy with the shared widths (d_k, classes, extent) made consistent."""
        if self.paradigm not in PARADIGMS:
            raise ConfigurationError(f"unknown paradigm {self.paradigm!r}; expected one of {PARADIGMS}")
        cfg = copy.deepcopy(self)
        d = cfg.encoder.embed_dim
        cfg.encoder.n_heads = 3 if cfg.paradigm == "esd" else 1
        cfg.attention.d_k = d
        cfg.lstm.input_dim = d
        cfg.lstm.output_dim = d
        cfg.decoder.target = tuple(cfg.encoder.input_size)
        if cfg.decoder.d_k != d:
            raise ConfigurationError(
                f"decoder seed {cfg.decoder.seed_channels}x{cfg.decoder.seed_extent}^2={cfg.decoder.d_k} != embed_dim {d}"
            )
        cfg.encoder.validate()
        cfg.decoder.validate()
        if cfg.paradigm == "esd":
            cfg.attention.validate()
        if cfg.paradigm == "eld":
            cfg.lstm.validate()
        return cfg

    def to_dict(self) -> dict:
        return {
            "paradigm": self.paradigm,
            "encoder": self.encoder.to_dict(),
            "attention": dict(vars(self.attention)),
            "lstm": dict(vars(self.lstm)),
            "decoder": self.decoder.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            paradigm=d["paradigm"],
            encoder=EncoderConfig(**d["encoder"]),
            attention=AttentionConfig(**d["attention"]),
            lstm=LstmConfig(**d["lstm"]),
            decoder=DecoderConfig(**d["decoder"]),
        )


class SegmentationModel(Module):
    """Frames ``N×T×C×H×W`` to class logits ``N×K×H×W``."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg = cfg.resolved()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(cfg.encoder, rng)
        self.temporal = None
        if cfg.paradigm == "esd":
            self.temporal = MultiHead(cfg.attention, rng)
        elif cfg.paradigm == "eld":
            self.temporal = Lstm(cfg.lstm, rng)
        self.decoder = Decoder(cfg.decoder, rng)

    def __call__(self, frames) -> Tensor:
        x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=self.dtype))
        single = x.ndim == 4
        if single:
            x = x.reshape((1,) + x.shape)
        if x.ndim != 5:
            raise ConfigurationError(f"expected N×T×C×H×W frames, got shape {x.shape}")
        n, t = x.shape[:2]
        heads = self.encoder(x.reshape((n * t,) + x.shape[2:]))
        d = self.cfg.encoder.embed_dim
        if self.cfg.paradigm == "ed":
            maps = self.decoder(heads[0])
            logits = mean_aggregate(maps.reshape((n, t) + maps.shape[1:]), axis=1)
        elif self.cfg.paradigm == "eld":
            logits = self.decoder(self.temporal(heads[0].reshape(n, t, d)))
        else:
            q, k, v = (h.reshape(n, t, d) for h in heads)
            logits = self.decoder(self.temporal(q, k, v))
        return logits.reshape(logits.shape[1:]) if single else logits

    @property
    def dtype(self):
        return self.encoder.inproj.conv.weight.dtype

    def predict_proba(self, frames) -> np.ndarray:
        """Softmax probabilities, evaluated in eval mode without building a graph."""
        was = self.training
        self.eval()
        try:
            with no_grad():
                return softmax(self(frames), axis=-3).data
        finally:
            self.train(was)


def build_model(cfg: Optional[ModelConfig] = None, seed: int = 0) -> SegmentationModel:
    return SegmentationModel(cfg or ModelConfig(), seed)
