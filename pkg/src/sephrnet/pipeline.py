"""End-to-end helpers shared by the CLI and the benchmark tests."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data import ChannelNormalizer, SceneSequence, generate_dataset, stack_scenes
from .ensemble import EnsembleModel, adaboost_train
from .exceptions import ConfigurationError
from .model import ModelConfig, SegmentationModel
from .training import TrainConfig, TrainResult, dtype_scope, predict_labels, train

BENCHMARK = dict(n_train=200, n_test=50, seed=1000, noise=0.05)


@dataclass
class Split:
    """Normalized train/test arrays plus the statistics that produced them."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_classes: int

    def as_dtype(self, dtype) -> "Split":
        return replace(self, x_train=self.x_train.astype(dtype), x_test=self.x_test.astype(dtype))


def split_scenes(
    scenes: Sequence[SceneSequence],
    n_classes: int,
    train_fraction: float = 0.8,
    stats: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Split:
    """First ``round(fraction·N)`` scenes train, the rest test.

    Normalization statistics come from the train part unless ``stats``
    (mean, std) are given, e.g. those stored in a checkpoint.
    """
    if not 0 < train_fraction < 1:
        raise ConfigurationError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if len(scenes) < 2:
        raise ConfigurationError(f"need at least two scenes to split, got {len(scenes)}")
    cut = min(max(int(round(train_fraction * len(scenes))), 1), len(scenes) - 1)
    x, y = stack_scenes(scenes)
    norm = ChannelNormalizer().fit(x[:cut])
    if stats is not None:
        norm.mean_, norm.std_ = (np.asarray(v, dtype=np.float64) for v in stats)
    return Split(norm.transform(x[:cut]), y[:cut], norm.transform(x[cut:]), y[cut:], norm.mean_, norm.std_, n_classes)


def benchmark_split(n_train: int = 200, n_test: int = 50, seed: int = 1000, noise: float = 0.05, **profile) -> Split:
    """The fixed-seed temporal-confusability benchmark."""
    n = n_train + n_test
    scenes = generate_dataset(n, seed=seed, noise=noise, **profile)
    return split_scenes(scenes, profile.get("K", 6), n_train / n)


def fit_model(
    cfg: ModelConfig, tcfg: TrainConfig, x: np.ndarray, y: np.ndarray, seed: Optional[int] = None
) -> Tuple[SegmentationModel, TrainResult]:
    """Build a model in ``tcfg.dtype`` (init seed ``seed``, default ``tcfg.seed``) and train it."""
    with dtype_scope(tcfg.dtype):
        model = SegmentationModel(cfg, tcfg.seed if seed is None else seed)
        result = train(model, x, y, tcfg, n_classes=cfg.decoder.n_classes)
    return model, result


def fit_ensemble(
    cfg: ModelConfig,
    tcfg: TrainConfig,
    x: np.ndarray,
    y: np.ndarray,
    n_members: int = 5,
    theta: float = 0.20,
    seed: int = 0,
) -> Tuple[EnsembleModel, List[TrainResult]]:
    results: List[TrainResult] = []

    def fit_member(idx, m):
        member_cfg = replace(tcfg, seed=seed * 1000 + m)
        model, res = fit_model(cfg, member_cfg, x[idx], y[idx])
        results.append(res)
        return model

    ens = adaboost_train(
        len(x),
        fit_member,
        lambda model: predict_labels(model, x, tcfg.batch_size),
        y,
        n_members=n_members,
        theta=theta,
        seed=seed,
        subset_fraction=tcfg.train_fraction,
    )
    return ens, results
