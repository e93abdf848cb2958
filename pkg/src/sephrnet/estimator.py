"""scikit-learn style wrappers around the segmentation model and the boosted ensemble."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from .data import ChannelNormalizer
from .decoder import argmax_labels
from .ensemble import adaboost_train, ensemble_scores
from .presets import model_config
from .training import TrainConfig, compute_metrics, dtype_scope, train
from .validation import check_labels, check_random_state, check_sequences


class SepHRNetSegmenter(ClassifierMixin, BaseEstimator):
    """Per-pixel classifier for ``N×T×C×H×W`` frame sequences.

    ``fit`` standardizes channels with training statistics, builds the
    network from ``preset`` and ``paradigm`` and trains it with Adam.
    ``predict`` returns ``N×H×W`` label maps.
    """

    def __init__(
        self,
        paradigm: str = "esd",
        preset: str = "bench",
        separable: bool = True,
        lr: float = 3e-3,
        epochs: int = 30,
        batch_size: int = 8,
        weight_decay: float = 1e-4,
        dtype: str = "float32",
        random_state: Optional[int] = None,
    ):
        self.paradigm = paradigm
        self.preset = preset
        self.separable = separable
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.dtype = dtype
        self.random_state = random_state

    def _train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            seed=seed,
            dtype=self.dtype,
        )

    def fit(self, X, y):
        from .model import SegmentationModel

        X = check_sequences(X)
        y = check_labels(y, X)
        seed = check_random_state(self.random_state)
        n, t, c, h, w = X.shape
        cfg = model_config(self.preset, self.paradigm, self.separable, in_channels=c, size=(h, w))
        k = cfg.decoder.n_classes
        if y.max() >= k:
            cfg.decoder.n_classes = k = int(y.max()) + 1
        tcfg = self._train_config(seed)
        tcfg.validate()
        self.normalizer_ = ChannelNormalizer().fit(X)
        with dtype_scope(tcfg.dtype):
            self.model_ = SegmentationModel(cfg, seed)
            result = train(self.model_, self.normalizer_.transform(X), y, tcfg, n_classes=k)
        self.log_ = result.log
        self.classes_ = np.arange(k)
        self.n_classes_ = k
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_sequences(X, allow_single=False)
        Z = self.normalizer_.transform(X).astype(self.model_.dtype)
        return np.concatenate(
            [self.model_.predict_proba(Z[i : i + self.batch_size]) for i in range(0, len(Z), self.batch_size)]
        ).astype(np.float64)

    def predict(self, X) -> np.ndarray:
        return argmax_labels(self.predict_proba(X), axis=1)

    def score(self, X, y, sample_weight=None) -> float:
        """Pixel accuracy over all maps."""
        X = check_sequences(X)
        y = check_labels(y, X)
        return compute_metrics(self.predict(X), y, max(self.n_classes_, int(y.max()) + 1)).accuracy


class AdaBoostSegmenter(ClassifierMixin, BaseEstimator):
    """Boosted ensemble of segmenters with the per-image ±1 error rule.

    An item counts as misclassified when more than ``theta`` of its pixels
    are wrong. Members vote with ``α_m``-weighted softmax probabilities.
    """

    def __init__(
        self,
        estimator: Optional[SepHRNetSegmenter] = None,
        n_members: int = 5,
        theta: float = 0.20,
        subset_fraction: float = 0.8,
        random_state: Optional[int] = None,
    ):
        self.estimator = estimator
        self.n_members = n_members
        self.theta = theta
        self.subset_fraction = subset_fraction
        self.random_state = random_state

    def fit(self, X, y):
        X = check_sequences(X)
        y = check_labels(y, X)
        seed = check_random_state(self.random_state)
        base = self.estimator if self.estimator is not None else SepHRNetSegmenter()

        def fit_member(idx, m):
            est = clone(base).set_params(random_state=seed * 1000 + m)
            return est.fit(X[idx], y[idx])

        self.ensemble_ = adaboost_train(
            len(X),
            fit_member,
            lambda est: est.predict(X),
            y,
            n_members=self.n_members,
            theta=self.theta,
            seed=seed,
            subset_fraction=self.subset_fraction,
        )
        self.estimators_ = [m.model for m in self.ensemble_.members]
        self.alphas_ = self.ensemble_.alphas
        self.sample_probs_ = self.ensemble_.sample_probs
        self.n_classes_ = max(e.n_classes_ for e in self.estimators_)
        self.classes_ = np.arange(self.n_classes_)
        return self

    def decision_function(self, X) -> np.ndarray:
        """Σ_m α_m · softmax_m, ``N×K×H×W``."""
        check_is_fitted(self, "ensemble_")
        return ensemble_scores(self.estimators_, self.alphas_, check_sequences(X))

    def predict(self, X) -> np.ndarray:
        return argmax_labels(self.decision_function(X), axis=1)

    def member_predictions(self, X) -> Sequence[np.ndarray]:
        check_is_fitted(self, "ensemble_")
        return [e.predict(X) for e in self.estimators_]

    def score(self, X, y, sample_weight=None) -> float:
        X = check_sequences(X)
        y = check_labels(y, X)
        return compute_metrics(self.predict(X), y, max(self.n_classes_, int(y.max()) + 1)).accuracy
