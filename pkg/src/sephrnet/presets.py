"""Named model and training configurations.

``desk``   default widths at 32×32, T=8, K=6.
``bench``  narrower encoder used by the synthetic benchmark and the estimators.
``full``   24×24 inputs, 71 frames, 48 classes and a 768-wide embedding;
           constructible for inspection and parameter audits, too slow to train here.
"""

from __future__ import annotations

from typing import Optional, Tuple

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .exceptions import ConfigurationError
from .model import PARADIGMS, ModelConfig
from .temporal import AttentionConfig, LstmConfig
from .training import TrainConfig

PRESETS = ("desk", "bench", "full")

DATA_PROFILES = {
    "desk": dict(T=8, C=4, H=32, W=32, K=6),
    "bench": dict(T=8, C=4, H=32, W=32, K=6),
    "full": dict(T=71, C=4, H=24, W=24, K=48),
}


def _check(preset: str, paradigm: str) -> None:
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    if paradigm not in PARADIGMS:
        raise ConfigurationError(f"unknown paradigm {paradigm!r}; expected one of {PARADIGMS}")


def model_config(
    preset: str = "desk",
    paradigm: str = "esd",
    separable: bool = True,
    in_channels: Optional[int] = None,
    size: Optional[Tuple[int, int]] = None,
    n_classes: Optional[int] = None,
) -> ModelConfig:
    _check(preset, paradigm)
    if preset == "full":
        enc = EncoderConfig(
            in_channels=4,
            input_size=(24, 24),
            stem_channels=64,
            channels_per_branch=(48, 96, 192),
            embed_dim=768,
            pool="avg",
        )
        dec = DecoderConfig(seed_channels=48, seed_extent=4, blocks=[(128, 4, 2, 1), (48, 3, 3, 0)], n_classes=48)
        att = AttentionConfig(d_k=768, n_heads=6)
        lstm = LstmConfig(input_dim=768, hidden=256, layers=3, output_dim=768)
    else:
        enc = EncoderConfig()
        if preset == "bench":
            enc.stem_channels = 8
            enc.channels_per_branch = (8, 16, 32)
        dec = DecoderConfig()
        # frame order is the only cue separating the confusable classes
        att = AttentionConfig(positional=True)
        # width matches the embedding so the recurrent block can start unit-to-unit
        lstm = LstmConfig(hidden=128, layers=3, init="identity")
    if not separable:
        enc.shallow_separable_depth = 0
    if in_channels is not None:
        enc.in_channels = int(in_channels)
    if size is not None:
        enc.input_size = tuple(int(s) for s in size)
    if n_classes is not None:
        dec.n_classes = int(n_classes)
    return ModelConfig(paradigm=paradigm, encoder=enc, attention=att, lstm=lstm, decoder=dec)


def train_config(preset: str = "desk", seed: int = 0) -> TrainConfig:
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    if preset == "full":
        return TrainConfig(lr=1e-4, batch_size=128, weight_decay=1e-4, epochs=25, seed=seed, dtype="float32")
    return TrainConfig(lr=3e-3, batch_size=8, weight_decay=1e-4, epochs=30, seed=seed, dtype="float32")
