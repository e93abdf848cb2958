"""Named-tensor checkpoint archives and paletted label-map images.

Archive layout (little-endian)::

    "SPCK" | uint32 version | uint32 metadata length | metadata (UTF-8 JSON)
    uint32 tensor count | per tensor: uint32 name length, name, tensor record

Metadata is serialized with sorted keys so identical states produce identical
bytes.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from .autodiff.serialization import read_tensor, write_tensor
from .exceptions import FormatError, IncompatibleCheckpointError

MAGIC = b"SPCK"
VERSION = 1
_U32 = struct.Struct("<I")

# Distinct, colour-blind friendly-ish base colours; cycled for larger K.
_BASE_PALETTE = [
    (230, 159, 0), (86, 180, 233), (0, 158, 115), (240, 228, 66),
    (0, 114, 178), (213, 94, 0), (204, 121, 167), (120, 120, 120),
]


def _read_u32(stream) -> int:
    raw = stream.read(4)
    if len(raw) != 4:
        raise FormatError("truncated checkpoint")
    return _U32.unpack(raw)[0]


def dumps(tensors: Dict[str, np.ndarray], metadata: dict) -> bytes:
    buf = io.BytesIO()
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(MAGIC)
    buf.write(_U32.pack(VERSION))
    buf.write(_U32.pack(len(meta)))
    buf.write(meta)
    buf.write(_U32.pack(len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        buf.write(_U32.pack(len(raw)))
        buf.write(raw)
        write_tensor(buf, arr)
    return buf.getvalue()


def loads(data: bytes) -> Tuple[Dict[str, np.ndarray], dict]:
    stream = io.BytesIO(data)
    if stream.read(4) != MAGIC:
        raise FormatError("not a checkpoint archive (bad magic)")
    version = _read_u32(stream)
    if version != VERSION:
        raise IncompatibleCheckpointError(f"checkpoint format version {version}, this build reads version {VERSION}")
    n = _read_u32(stream)
    meta_raw = stream.read(n)
    if len(meta_raw) != n:
        raise FormatError("truncated checkpoint metadata")
    try:
        metadata = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint metadata: {exc}") from None
    tensors = {}
    for _ in range(_read_u32(stream)):
        size = _read_u32(stream)
        name = stream.read(size)
        if len(name) != size:
            raise FormatError("truncated tensor name")
        tensors[name.decode("utf-8")] = read_tensor(stream)
    if stream.read(1):
        raise FormatError("trailing bytes after the last tensor")
    return tensors, metadata


def save(path: Union[str, Path], tensors: Dict[str, np.ndarray], metadata: dict) -> None:
    Path(path).write_bytes(dumps(tensors, metadata))


def load(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())


def save_model(path, model, metadata: dict) -> None:
    meta = dict(metadata)
    meta["model"] = model.cfg.to_dict()
    meta["dtype"] = str(model.dtype)
    save(path, model.state_dict(), meta)


def load_model(path):
    """(model, metadata); raises IncompatibleCheckpointError on architecture mismatch."""
    from .autodiff.tensor import get_default_dtype, set_default_dtype
    from .exceptions import ConfigurationError
    from .model import ModelConfig, SegmentationModel

    tensors, meta = load(path)
    if "model" not in meta:
        raise IncompatibleCheckpointError(f"{path} carries no model description")
    prev = get_default_dtype()
    try:
        set_default_dtype(np.dtype(meta.get("dtype", "float64")))
        try:
            model = SegmentationModel(ModelConfig.from_dict(meta["model"]))
            model.load_state_dict(tensors)
        except (ConfigurationError, KeyError, TypeError) as exc:
            raise IncompatibleCheckpointError(f"{path} does not match this architecture: {exc}") from None
    finally:
        set_default_dtype(prev)
    return model, meta


def palette(k: int) -> list:
    flat = []
    for i in range(k):
        r, g, b = _BASE_PALETTE[i % len(_BASE_PALETTE)]
        shade = 1.0 - 0.35 * ((i // len(_BASE_PALETTE)) % 3) / 2
        flat.extend(int(round(c * shade)) for c in (r, g, b))
    return flat + [0] * (768 - len(flat))


def save_label_png(path: Union[str, Path], labels: np.ndarray, k: int) -> None:
    """Write an H×W label map as a paletted PNG (pixel value = class index)."""
    from PIL import Image

    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise FormatError(f"label map must be H×W, got shape {labels.shape}")
    if k > 256 or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise FormatError(f"labels must lie in [0, {k}) with k <= 256")
    h, w = labels.shape
    img = Image.frombytes("P", (w, h), np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
    img.putpalette(palette(k))
    img.save(path, format="PNG", optimize=False)
