"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .exceptions import DataError


def check_sequences(X, allow_single: bool = False) -> np.ndarray:
    """Return ``X`` as a finite float array shaped ``N×T×C×H×W``."""
    try:
        X = np.asarray(X, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"frames are not numeric: {exc}") from None
    if allow_single and X.ndim == 4:
        X = X[None]
    if X.ndim != 5:
        raise DataError(f"expected N×T×C×H×W frames, got an array of rank {X.ndim} with shape {X.shape}")
    if 0 in X.shape:
        raise DataError(f"frames have an empty axis: {X.shape}")
    if not np.isfinite(X).all():
        raise DataError("frames contain NaN or infinite values")
    return X


def check_labels(y, X: Optional[np.ndarray] = None, n_classes: Optional[int] = None) -> np.ndarray:
    """Return ``y`` as an int64 ``N×H×W`` array consistent with ``X``."""
    y = np.asarray(y)
    if y.dtype.kind == "f":
        if not np.all(np.mod(y, 1) == 0):
            raise DataError("labels must be integers")
    elif y.dtype.kind not in "iu":
        raise DataError(f"labels must be integers, got dtype {y.dtype}")
    y = y.astype(np.int64)
    if y.ndim != 3:
        raise DataError(f"expected N×H×W label maps, got shape {y.shape}")
    if X is not None:
        if len(y) != len(X):
            raise DataError(f"{len(X)} sequences but {len(y)} label maps")
        if y.shape[1:] != X.shape[-2:]:
            raise DataError(f"label extent {y.shape[1:]} does not match frame extent {X.shape[-2:]}")
    if y.min() < 0:
        raise DataError(f"negative label {int(y.min())}")
    if n_classes is not None and y.max() >= n_classes:
        raise DataError(f"label {int(y.max())} outside [0, {n_classes})")
    return y


def check_random_state(seed) -> int:
    """Integer seed for the package's generators (``None`` means 0)."""
    if seed is None:
        return 0
    if isinstance(seed, (int, np.integer)) and seed >= 0:
        return int(seed)
    raise DataError(f"random_state must be a non-negative integer or None, got {seed!r}")
