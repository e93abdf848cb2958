"""Synthetic crop-field scene sequences, normalization, resizing and the SPST container.

Every scene is a Voronoi partition of the image into field parcels, one site
per class, so every class is present. A pixel's value in band ``b`` at frame
``t`` is its class's phenology curve plus Gaussian noise. Classes 0 and 1 are
time-confusable: their curves are mirror images in time, so each band has the
same mean over the season and the two classes differ only in *when* they peak.
"""

from __future__ import annotations

import hashlib
import io
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .autodiff.serialization import read_labels, read_tensor, write_labels, write_tensor
from .exceptions import ConfigurationError, DataError, FormatError

logger = logging.getLogger(__name__)

MAGIC = b"SPST"
VERSION = 1
_HEADER = struct.Struct("<4sIII")

DESK_PROFILE = dict(T=8, C=4, H=32, W=32, K=6)
FULL_PROFILE = dict(T=71, C=4, H=24, W=24, K=48)


@dataclass
class SceneSequence:
    frames: np.ndarray  # T×C×H×W
    labels: np.ndarray  # H×W
    scene_id: str = ""

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise DataError(f"frames must be T×C×H×W, got {self.frames.shape}")
        if self.labels.shape != self.frames.shape[2:]:
            raise DataError(f"labels {self.labels.shape} do not match frame extent {self.frames.shape[2:]}")


@dataclass
class PhenologyProfile:
    """Gaussian bump per (class, band): ``base + amplitude * exp(-(t - peak)^2 / (2 width^2))``."""

    amplitude: np.ndarray  # K×C
    peak: np.ndarray  # K×C, in frame units
    width: np.ndarray  # K×C
    base: float = 0.1

    @property
    def n_classes(self) -> int:
        return self.amplitude.shape[0]

    def curves(self, T: int) -> np.ndarray:
        """K×C×T curve values, all within [0, 1]."""
        t = np.arange(T)[None, None, :]
        bump = np.exp(-((t - self.peak[..., None]) ** 2) / (2 * self.width[..., None] ** 2))
        return self.base + self.amplitude[..., None] * bump


def default_profile(K: int = 6, C: int = 4, T: int = 8) -> PhenologyProfile:
    """Profile with classes 0/1 time-confusable and the rest spectrally distinct.

    The confusable pair shares amplitudes and widths, with peaks reflected
    about the middle of the season. Every other class peaks exactly mid-season,
    so a scene and its time reversal are equally likely up to swapping 0 and 1:
    no frame reveals on its own whether it is early or late.
    """
    if K < 2:
        raise ConfigurationError(f"need at least two classes, got K={K}")
    rng = np.random.default_rng(12345)
    span = T - 1
    amplitude = np.empty((K, C))
    peak = np.full((K, C), span / 2.0)
    width = np.full((K, C), max(T / 8.0, 0.75))
    amplitude[:2] = 0.6
    peak[0] = 0.25 * span
    peak[1] = 0.75 * span
    for c in range(2, K):
        amplitude[c] = 0.1 + 0.1 * rng.random(C)
        amplitude[c, c % C] = 0.75
        amplitude[c, (c + 1) % C] = 0.3 + 0.15 * ((c // C) % 2)
        width[c] = max(T / 4.0, 1.0)
    return PhenologyProfile(amplitude=amplitude, peak=peak, width=width)


def voronoi_labels(rng: np.random.Generator, H: int, W: int, K: int, grid: int = 4) -> np.ndarray:
    """H×W parcel map with one site per class.

    With ``grid > 0`` the partition is computed on a ``grid × grid`` lattice of
    equal blocks (parcels made of whole blocks); with ``grid == 0`` per pixel.
    Ties go to the lower class index.
    """
    if grid:
        if H % grid or W % grid:
            raise ConfigurationError(f"parcel grid {grid} does not divide {H}x{W}")
        if K > grid * grid:
            raise ConfigurationError(f"{K} classes need at least {K} grid cells, grid is {grid}x{grid}")
        gh, gw = grid, grid
    else:
        gh, gw = H, W
    cells = rng.choice(gh * gw, size=K, replace=False)
    sites = np.stack([cells // gw, cells % gw], axis=1).astype(float)
    yy, xx = np.mgrid[0:gh, 0:gw]
    d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    coarse = np.argmin(d2, axis=-1)
    if grid:
        coarse = np.repeat(np.repeat(coarse, H // gh, axis=0), W // gw, axis=1)
    return coarse.astype(np.int64)


def generate_scene(
    seed: int,
    T: int = 8,
    C: int = 4,
    H: int = 32,
    W: int = 32,
    K: int = 6,
    noise: float = 0.05,
    grid: int = 4,
    profile: Optional[PhenologyProfile] = None,
    scene_id: Optional[str] = None,
) -> SceneSequence:
    if K < 2:
        raise ConfigurationError(f"need at least two classes, got K={K}")
    rng = np.random.default_rng(seed)
    profile = profile or default_profile(K, C, T)
    if profile.amplitude.shape != (K, C):
        raise ConfigurationError(f"profile is {profile.amplitude.shape}, scene wants K={K}, C={C}")
    labels = voronoi_labels(rng, H, W, K, grid)
    curves = profile.curves(T)  # K×C×T
    frames = curves[labels].transpose(3, 2, 0, 1)  # H×W×C×T -> T×C×H×W
    if noise > 0:
        frames = frames + rng.normal(0.0, noise, size=frames.shape)
    return SceneSequence(np.ascontiguousarray(frames), labels, scene_id or f"scene-{seed}")


def generate_dataset(
    n_scenes: int,
    seed: int = 0,
    **kwargs,
) -> List[SceneSequence]:
    """``n_scenes`` scenes whose seeds are spawned from ``seed``."""
    children = np.random.SeedSequence(seed).generate_state(n_scenes)
    return [generate_scene(int(s), scene_id=f"{seed}-{i}", **kwargs) for i, s in enumerate(children)]


def stack_scenes(scenes: Sequence[SceneSequence]) -> Tuple[np.ndarray, np.ndarray]:
    """(N×T×C×H×W frames, N×H×W labels)."""
    return np.stack([s.frames for s in scenes]), np.stack([s.labels for s in scenes])


# ------------------------------------------------------------- normalization
class ChannelNormalizer(TransformerMixin, BaseEstimator):
    """Per-channel standardization of ``N×T×C×H×W`` (or ``T×C×H×W``) frames."""

    def __init__(self, std_floor: float = 1e-8):
        self.std_floor = std_floor

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.size == 0:
            raise DataError("cannot fit normalization statistics on an empty dataset")
        axes = tuple(i for i in range(X.ndim) if i != X.ndim - 3)
        self.mean_ = X.mean(axis=axes)
        std = X.std(axis=axes)
        flat = std < self.std_floor
        if flat.any():
            logger.warning("constant channel(s) %s; std floored at %g", np.flatnonzero(flat).tolist(), self.std_floor)
        self.std_ = np.maximum(std, self.std_floor)
        return self

    def _shape(self, X):
        return (-1, 1, 1)

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean_.reshape(self._shape(X))) / self.std_.reshape(self._shape(X))

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        X = np.asarray(X, dtype=np.float64)
        return X * self.std_.reshape(self._shape(X)) + self.mean_.reshape(self._shape(X))


def normalize(train_frames, *others, std_floor: float = 1e-8):
    """Standardize with training-split statistics only.

    Returns ``(normalized_train, *normalized_others, (mean, std))``.
    """
    norm = ChannelNormalizer(std_floor).fit(train_frames)
    out = [norm.transform(train_frames)] + [norm.transform(o) for o in others]
    return (*out, (norm.mean_, norm.std_))


# ------------------------------------------------------------------ resizing
def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """n_out×n_in interpolation weights, half-pixel centres (corners not aligned)."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    return np.minimum(np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(int), n_in - 1)


def resize(image: np.ndarray, target: Tuple[int, int], mode: str = "bilinear", labels: bool = False) -> np.ndarray:
    """Resize a ``...×H×W`` array to ``target``.

    ``mode='bilinear'`` interpolates (label maps use nearest neighbour);
    ``mode='pad'`` centres the image on a zero canvas and never crops.
    """
    image = np.asarray(image)
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise ConfigurationError(f"target extent must be positive, got {target}")
    h, w = image.shape[-2:]
    if mode == "pad":
        if th < h or tw < w:
            raise ConfigurationError(f"pad mode cannot shrink {h}x{w} to {th}x{tw}")
        out = np.zeros(image.shape[:-2] + (th, tw), dtype=image.dtype)
        top, left = (th - h) // 2, (tw - w) // 2
        out[..., top : top + h, left : left + w] = image
        return out
    if mode != "bilinear":
        raise ConfigurationError(f"unknown resize mode {mode!r}")
    if (h, w) == (th, tw):
        return image.copy()
    if labels:
        return image[..., _nearest_index(h, th)[:, None], _nearest_index(w, tw)[None, :]]
    rows = _bilinear_matrix(h, th)
    cols = _bilinear_matrix(w, tw)
    return np.einsum("ih,...hw,jw->...ij", rows, image.astype(np.float64), cols)


# ----------------------------------------------------------------- container
def write_dataset(stream: BinaryIO, scenes: Sequence[SceneSequence], n_classes: int) -> None:
    stream.write(_HEADER.pack(MAGIC, VERSION, n_classes, len(scenes)))
    for s in scenes:
        sid = s.scene_id.encode("utf-8")
        stream.write(struct.pack("<I", len(sid)))
        stream.write(sid)
        write_tensor(stream, s.frames)
        write_labels(stream, s.labels)


def read_dataset(stream: BinaryIO) -> Tuple[List[SceneSequence], int]:
    head = stream.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise FormatError("truncated dataset header")
    magic, version, n_classes, count = _HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}; not an SPST dataset")
    if version != VERSION:
        raise FormatError(f"unsupported SPST version {version}; this build reads version {VERSION}")
    scenes = []
    for i in range(count):
        raw = stream.read(4)
        if len(raw) != 4:
            raise FormatError(f"truncated dataset: scene {i} of {count} missing")
        (n,) = struct.unpack("<I", raw)
        sid = stream.read(n)
        if len(sid) != n:
            raise FormatError(f"truncated dataset in scene {i} id")
        frames = read_tensor(stream)
        labels = read_labels(stream)
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
            raise FormatError(f"scene {i} has labels outside [0, {n_classes})")
        scenes.append(SceneSequence(frames, labels, sid.decode("utf-8")))
    return scenes, n_classes


def save_dataset(path: Union[str, Path], scenes: Sequence[SceneSequence], n_classes: int) -> None:
    buf = io.BytesIO()
    write_dataset(buf, scenes, n_classes)
    Path(path).write_bytes(buf.getvalue())


def load_dataset(path: Union[str, Path]) -> Tuple[List[SceneSequence], int]:
    with open(path, "rb") as f:
        return read_dataset(f)


def scene_digest(scene: SceneSequence) -> str:
    h = hashlib.sha256()
    h.update(scene.scene_id.encode("utf-8"))
    h.update(np.ascontiguousarray(scene.frames, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(scene.labels, dtype="<i8").tobytes())
    return h.hexdigest()
