"""AdaBoost over segmentation models with a per-image ±1 error rule."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .decoder import argmax_labels
from .exceptions import ConfigurationError, FormatError

logger = logging.getLogger(__name__)

EPS_CLAMP = 1e-6
MANIFEST_VERSION = 1


def sample_error(pred: np.ndarray, truth: np.ndarray, theta: float = 0.20) -> int:
    """+1 if strictly more than ``theta`` of the pixels are wrong, else -1."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ConfigurationError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    if not 0 < theta < 1:
        raise ConfigurationError(f"theta must lie in (0, 1), got {theta}")
    wrong = np.count_nonzero(pred != truth)
    return 1 if wrong / truth.size > theta else -1


def systematic_sample(probs: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` distinct indices, inclusion probability proportional to ``probs``.

    Systematic (Madow) sampling: inclusion probabilities ``π_i = n·p_i`` are
    capped at 1 with the excess spread over the rest, then a single uniform
    offset walks the cumulative sum in unit steps. Returned sorted.
    """
    probs = np.asarray(probs, dtype=np.float64)
    m = len(probs)
    if not 1 <= n <= m:
        raise ConfigurationError(f"cannot draw {n} distinct items from {m}")
    if n == m:
        return np.arange(m)
    pi = np.zeros(m)
    fixed = np.zeros(m, dtype=bool)
    while True:
        free = ~fixed
        budget = n - fixed.sum()
        pi[free] = budget * probs[free] / probs[free].sum()
        pi[fixed] = 1.0
        over = free & (pi >= 1.0)
        if not over.any():
            break
        fixed |= over
    cum = np.concatenate([[0.0], np.cumsum(pi)])
    cum[-1] = n
    points = rng.random() + np.arange(n)
    picked = np.searchsorted(cum, points, side="right") - 1
    picked = np.unique(np.clip(picked, 0, m - 1))
    if len(picked) != n:  # float slack on a capped item; top up deterministically
        rest = np.setdiff1d(np.argsort(-pi, kind="stable"), picked, assume_unique=False)
        picked = np.sort(np.concatenate([picked, rest[: n - len(picked)]]))
    return picked


def weighted_error(probs: np.ndarray, errors: np.ndarray) -> float:
    """Σ p_i over items with error +1, clamped to [1e-6, 1 - 1e-6]."""
    eps = float(np.sum(probs[np.asarray(errors) == 1]))
    return min(max(eps, EPS_CLAMP), 1.0 - EPS_CLAMP)


def vote_weight(eps: float) -> float:
    return 0.5 * math.log((1.0 - eps) / eps)


def reweight(probs: np.ndarray, errors: np.ndarray, alpha: float) -> np.ndarray:
    """``p_i · exp(α · e_i)`` renormalized; +1 errors grow, -1 errors shrink."""
    # Shift the exponent so the largest factor is 1; the constant cancels in the renormalization.
    z = alpha * np.asarray(errors, dtype=np.float64)
    p = probs * np.exp(z - z.max())
    return p / p.sum()


@dataclass
class Member:
    model: object
    alpha: float
    checkpoint: Optional[str] = None


@dataclass
class EnsembleModel:
    members: List[Member] = field(default_factory=list)
    sample_probs: Optional[np.ndarray] = None
    theta: float = 0.20
    seed: int = 0
    history: List[dict] = field(default_factory=list)

    @property
    def n_members(self) -> int:
        return len(self.members)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([m.alpha for m in self.members])

    def predict_scores(self, frames: np.ndarray, batch_size: int = 8) -> np.ndarray:
        return ensemble_scores([m.model for m in self.members], self.alphas, frames, batch_size)

    def predict(self, frames: np.ndarray, batch_size: int = 8) -> np.ndarray:
        return argmax_labels(self.predict_scores(frames, batch_size), axis=-3)


def predict_proba(model, frames: np.ndarray, batch_size: int = 8) -> np.ndarray:
    frames = np.asarray(frames)
    single = frames.ndim == 4
    if single:
        frames = frames[None]
    out = np.concatenate([model.predict_proba(frames[i : i + batch_size]) for i in range(0, len(frames), batch_size)])
    return out[0] if single else out


def ensemble_scores(models: Sequence, alphas: Sequence[float], frames: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Σ_m α_m · softmax(logits_m), shape ``(N×)K×H×W``."""
    if not len(models):
        raise ConfigurationError("ensemble has no members")
    total = None
    for model, a in zip(models, alphas):
        p = predict_proba(model, frames, batch_size) * float(a)
        total = p if total is None else total + p
    return total


def ensemble_predict(ens: EnsembleModel, frames: np.ndarray, batch_size: int = 8) -> Tuple[np.ndarray, np.ndarray]:
    """(score map, labels); ties go to the lowest class index."""
    scores = ens.predict_scores(frames, batch_size)
    return scores, argmax_labels(scores, axis=-3)


def adaboost_train(
    n_items: int,
    fit_member: Callable[[np.ndarray, int], object],
    predict_member: Callable[[object], np.ndarray],
    truth: np.ndarray,
    n_members: int = 5,
    theta: float = 0.20,
    seed: int = 0,
    subset_fraction: float = 0.8,
) -> EnsembleModel:
    """Boosting rounds over ``n_items`` training items.

    ``fit_member(indices, round)`` trains a base model on the drawn subset;
    ``predict_member(model)`` returns its label maps for all training items.
    """
    if n_members < 1:
        raise ConfigurationError(f"need at least one member, got {n_members}")
    if n_items < 1:
        raise ConfigurationError("boosting needs a non-empty training set")
    rng = np.random.default_rng(seed)
    probs = np.full(n_items, 1.0 / n_items)
    k = max(1, int(round(subset_fraction * n_items)))
    ens = EnsembleModel(theta=theta, seed=seed)
    for m in range(n_members):
        idx = systematic_sample(probs, k, rng)
        model = fit_member(idx, m)
        preds = predict_member(model)
        errors = np.array([sample_error(p, t, theta) for p, t in zip(preds, truth)])
        eps = weighted_error(probs, errors)
        if eps in (EPS_CLAMP, 1.0 - EPS_CLAMP):
            logger.warning("round %d is degenerate: weighted error clamped to %g", m, eps)
        alpha = vote_weight(eps)
        probs = reweight(probs, errors, alpha)
        ens.members.append(Member(model, alpha))
        ens.history.append({"round": m, "epsilon": eps, "alpha": alpha, "n_errors": int((errors == 1).sum())})
        logger.info("round %d: eps %.4g alpha %.4g errors %d", m, eps, alpha, (errors == 1).sum())
    ens.sample_probs = probs
    return ens


# ------------------------------------------------------------------ manifest
def write_manifest(path: Union[str, Path], ens: EnsembleModel, checkpoints: Sequence[str]) -> None:
    if len(checkpoints) != ens.n_members:
        raise ConfigurationError(f"{ens.n_members} members but {len(checkpoints)} checkpoint paths")
    doc = {
        "version": MANIFEST_VERSION,
        "theta": ens.theta,
        "seed": ens.seed,
        "members": [{"checkpoint": c, "alpha": m.alpha} for c, m in zip(checkpoints, ens.members)],
        "sample_probs": None if ens.sample_probs is None else [float(p) for p in ens.sample_probs],
        "history": ens.history,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path: Union[str, Path]) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"ensemble manifest {path} is not valid JSON: {exc}") from None
    if doc.get("version") != MANIFEST_VERSION:
        raise FormatError(f"unsupported ensemble manifest version {doc.get('version')}")
    return doc
