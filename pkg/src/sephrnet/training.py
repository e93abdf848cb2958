"""Loss, Adam with decoupled weight decay, cosine schedule, metrics and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .autodiff import Tensor, no_grad
from .autodiff import cross_entropy as _cross_entropy
from .autodiff.tensor import get_default_dtype, set_default_dtype
from .decoder import argmax_labels
from .exceptions import ConfigurationError, DataError, DivergenceError
from .nn import Module

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
LOG_COLUMNS = ("epoch", "lr", "loss", "accuracy", "precision", "recall", "f1", "miou")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    weight_decay: float = 1e-4
    epochs: int = 25
    schedule: str = "cosine"
    seed: int = 0
    train_fraction: float = 0.8
    dtype: str = "float64"

    def validate(self) -> None:
        if not self.lr >= 0:
            raise ConfigurationError(f"lr must be non-negative, got {self.lr}")
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch_size and epochs must be positive")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    return _cross_entropy(logits, labels)


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    if not 0 <= epoch < total_epochs:
        raise ConfigurationError(f"epoch {epoch} outside [0, {total_epochs})")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    weight_decay: float,
    t: int,
) -> None:
    """One in-place Adam update; decay shrinks weights before the moment step."""
    if t < 1:
        raise ConfigurationError(f"Adam step index must be >= 1, got {t}")
    b1, b2 = ADAM_BETAS
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        if g is None:
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)).astype(p.data.dtype)
    state.t = t


class Adam:
    def __init__(self, params: Sequence[Tensor], weight_decay: float = 0.0):
        self.params = list(params)
        self.weight_decay = weight_decay
        self.state = AdamState.zeros_like(self.params)

    def step(self, lr: float) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, lr, self.weight_decay, self.state.t + 1)


# ------------------------------------------------------------------- metrics
@dataclass
class SegmentationMetrics:
    confusion: np.ndarray  # rows truth, cols prediction
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    iou: np.ndarray
    present: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    def _macro(self, v: np.ndarray) -> float:
        return float(v[self.present].mean()) if self.present.any() else 0.0

    @property
    def macro_precision(self) -> float:
        return self._macro(self.precision)

    @property
    def macro_recall(self) -> float:
        return self._macro(self.recall)

    @property
    def macro_f1(self) -> float:
        return self._macro(self.f1)

    @property
    def miou(self) -> float:
        return self._macro(self.iou)

    def summary(self) -> Dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision": self.macro_precision,
            "recall": self.macro_recall,
            "f1": self.macro_f1,
            "miou": self.miou,
        }

    def __add__(self, other: "SegmentationMetrics") -> "SegmentationMetrics":
        return metrics_from_confusion(self.confusion + other.confusion)


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros(a.shape, dtype=np.float64)
    np.divide(a, b, out=out, where=b > 0)
    return out


def confusion_matrix(pred: np.ndarray, truth: np.ndarray, k: int) -> np.ndarray:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ConfigurationError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    for name, a in (("prediction", pred), ("truth", truth)):
        if a.size and (a.min() < 0 or a.max() >= k):
            raise DataError(f"{name} labels outside [0, {k})")
    idx = truth.astype(np.int64).ravel() * k + pred.astype(np.int64).ravel()
    return np.bincount(idx, minlength=k * k).reshape(k, k)


def metrics_from_confusion(cm: np.ndarray) -> SegmentationMetrics:
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    pred_count = cm.sum(axis=0)
    true_count = cm.sum(axis=1)
    total = cm.sum()
    precision = _safe_div(tp, pred_count)
    recall = _safe_div(tp, true_count)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    iou = _safe_div(tp, true_count + pred_count - tp)
    return SegmentationMetrics(
        confusion=cm,
        accuracy=float(tp.sum() / total) if total else 0.0,
        precision=precision,
        recall=recall,
        f1=f1,
        iou=iou,
        present=(true_count + pred_count) > 0,
    )


def compute_metrics(pred: np.ndarray, truth: np.ndarray, k: int) -> SegmentationMetrics:
    """Metrics over one map or a stack of maps (the confusion matrix sums over all pixels)."""
    return metrics_from_confusion(confusion_matrix(pred, truth, k))


# ---------------------------------------------------------------------- loop
@dataclass
class TrainResult:
    log: List[Dict[str, float]] = field(default_factory=list)
    best_state: Optional[dict] = None
    best_epoch: int = -1
    best_miou: float = -1.0

    def csv_lines(self) -> List[str]:
        return [",".join(LOG_COLUMNS)] + [format_log_row(r) for r in self.log]


def format_log_row(row: Dict[str, float]) -> str:
    return ",".join(str(int(row[c])) if c == "epoch" else repr(float(row[c])) for c in LOG_COLUMNS)


def predict_labels(model: Module, frames: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Eval-mode argmax maps for ``N×T×C×H×W`` frames."""
    was = model.training
    model.eval()
    out = []
    try:
        with no_grad():
            for i in range(0, len(frames), batch_size):
                logits = model(np.asarray(frames[i : i + batch_size]))
                out.append(argmax_labels(logits.data, axis=1))
    finally:
        model.train(was)
    return np.concatenate(out) if out else np.zeros((0,) + frames.shape[-2:], dtype=np.int64)


def evaluate(model: Module, frames: np.ndarray, labels: np.ndarray, k: int, batch_size: int = 8) -> SegmentationMetrics:
    return compute_metrics(predict_labels(model, frames, batch_size), labels, k)


def train(
    model: Module,
    frames: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    n_classes: Optional[int] = None,
    on_epoch: Optional[Callable[[Dict[str, float]], None]] = None,
) -> TrainResult:
    """Mini-batch Adam over ``frames`` (``N×T×C×H×W``) and ``labels`` (``N×H×W``).

    Each epoch's log row carries the mean batch loss and eval-mode metrics on
    the training data. The state with the best mIoU is kept.
    """
    cfg.validate()
    frames = np.asarray(frames)
    labels = np.asarray(labels)
    if len(frames) == 0:
        raise DataError("cannot train on an empty dataset")
    if len(frames) != len(labels):
        raise DataError(f"{len(frames)} sequences but {len(labels)} label maps")
    k = n_classes or int(model.cfg.decoder.n_classes)
    dtype = model.dtype
    frames = frames.astype(dtype, copy=False)
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = Adam(params, cfg.weight_decay)
    result = TrainResult()
    n = len(frames)
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr) if cfg.schedule == "cosine" else cfg.lr
        order = rng.permutation(n)
        model.train()
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            model.zero_grad()
            loss = cross_entropy(model(frames[idx]), labels[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(epoch, b, value)
            loss.backward()
            opt.step(lr)
            total += value * len(idx)
            seen += len(idx)
        metrics = evaluate(model, frames, labels, k, cfg.batch_size)
        row = {"epoch": epoch, "lr": lr, "loss": total / seen, **metrics.summary()}
        result.log.append(row)
        logger.info("epoch %d lr %.3g loss %.4f acc %.4f miou %.4f", epoch, lr, row["loss"], row["accuracy"], row["miou"])
        if on_epoch:
            on_epoch(row)
        if row["miou"] > result.best_miou:
            result.best_miou = row["miou"]
            result.best_epoch = epoch
            result.best_state = model.state_dict()
    return result


class dtype_scope:
    """Temporarily switch the default parameter dtype."""

    def __init__(self, dtype):
        self.dtype = np.dtype(dtype)

    def __enter__(self):
        self.prev = get_default_dtype()
        set_default_dtype(self.dtype)
        return self

    def __exit__(self, *exc):
        set_default_dtype(self.prev)
        return False


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
