"""Convolution-family primitives: conv2d, separable_conv2d, conv_transpose2d.

All functions accept either a single ``C×H×W`` image or an ``N×C×H×W`` batch.
Convolution follows the cross-correlation convention (no kernel flip).
"""

from __future__ import annotations

from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ConfigurationError
from .tensor import Tensor, _node

IntPair = Union[int, Tuple[int, int]]


def _pair(v: IntPair, name: str, minimum: int) -> Tuple[int, int]:
    pair = (v, v) if isinstance(v, (int, np.integer)) else tuple(v)
    if len(pair) != 2 or any(int(p) < minimum for p in pair):
        raise ConfigurationError(f"{name} must be an int >= {minimum} or a pair of them, got {v!r}")
    return int(pair[0]), int(pair[1])


def _batched(x: Tensor) -> Tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ConfigurationError(f"expected a C×H×W or N×C×H×W tensor, got shape {x.shape}")


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    """Patches of a padded batch as an (N, C·kh·kw, Ho·Wo) array."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back into a padded batch."""
    n, c = shape[:2]
    patches = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += patches[:, :, i, j]
    return out


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: IntPair = 1,
    padding: IntPair = 0,
) -> Tensor:
    """2-D cross-correlation of ``x`` with a ``C_out×C_in×k_h×k_w`` kernel."""
    xb, single = _batched(x)
    if kernel.ndim != 4:
        raise ConfigurationError(f"conv2d kernel must be C_out×C_in×k_h×k_w, got shape {kernel.shape}")
    sh, sw = _pair(stride, "stride", 1)
    ph, pw = _pair(padding, "padding", 0)
    n, c, h, w = xb.shape
    cout, cin, kh, kw = kernel.shape
    if cin != c:
        raise ConfigurationError(
            f"conv2d channel mismatch: kernel {tuple(kernel.shape)} expects C_in={cin}, input {tuple(x.shape)} has {c}"
        )
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ConfigurationError(f"kernel {kh}×{kw} larger than padded input {h + 2 * ph}×{w + 2 * pw}")
    if bias is not None and bias.shape != (cout,):
        raise ConfigurationError(f"bias shape {bias.shape} does not match C_out={cout}")
    ho = conv_output_size(h, kh, sh, ph)
    wo = conv_output_size(w, kw, sw, pw)

    xp = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xb
    cols = _im2col(xp, kh, kw, sh, sw, ho, wo)
    wmat = kernel.data.reshape(cout, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, cout, ho, wo)
    if single:
        out = out[0]
    padded_shape = xp.shape

    def backward(g):
        g3 = (g[None] if single else g).reshape(n, cout, ho * wo)
        gx = None
        if x.requires_grad:
            gxp = _col2im(wmat.T @ g3, padded_shape, kh, kw, sh, sw, ho, wo)
            gx = gxp[:, :, ph : ph + h, pw : pw + w]
            gx = gx[0] if single else gx
        gk = None
        if kernel.requires_grad:
            gk = np.einsum("nop,nqp->oq", g3, cols, optimize=True).reshape(kernel.shape)
        if bias is None:
            return gx, gk
        return gx, gk, g3.sum(axis=(0, 2))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _node(out, parents, backward)


def separable_conv2d(
    x: Tensor,
    w_row: Tensor,
    w_col: Tensor,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """k×1 pass (rows) followed by a 1×k pass (columns).

    ``w_row`` is ``C_mid×C_in×k×1`` and ``w_col`` is ``C_out×C_mid×1×k``. The
    vertical pass pads and strides rows only, the horizontal pass columns only,
    so the composite matches a k×k convolution with the same stride/padding.
    """
    if w_row.ndim != 4 or w_row.shape[3] != 1:
        raise ConfigurationError(f"w_row must be C_mid×C_in×k×1, got {w_row.shape}")
    if w_col.ndim != 4 or w_col.shape[2] != 1:
        raise ConfigurationError(f"w_col must be C_out×C_mid×1×k, got {w_col.shape}")
    if w_col.shape[1] != w_row.shape[0]:
        raise ConfigurationError(
            f"separable channel chain broken: w_row produces {w_row.shape[0]} channels, w_col expects {w_col.shape[1]}"
        )
    mid = conv2d(x, w_row, stride=(stride, 1), padding=(padding, 0))
    return conv2d(mid, w_col, stride=(1, stride), padding=(0, padding))


def conv_transpose_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def conv_transpose2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: IntPair = 1,
    padding: IntPair = 0,
) -> Tensor:
    """Adjoint of :func:`conv2d` with respect to its input.

    ``kernel`` has the layout of the forward convolution it transposes,
    ``C_fwd_out×C_fwd_in×k_h×k_w``: the input here has ``C_fwd_out`` channels
    and the output ``C_fwd_in``.
    """
    xb, single = _batched(x)
    if kernel.ndim != 4:
        raise ConfigurationError(f"conv_transpose2d kernel must be rank 4, got shape {kernel.shape}")
    sh, sw = _pair(stride, "stride", 1)
    ph, pw = _pair(padding, "padding", 0)
    n, c, h, w = xb.shape
    cin, cout, kh, kw = kernel.shape
    if cin != c:
        raise ConfigurationError(
            f"conv_transpose2d channel mismatch: kernel {tuple(kernel.shape)} expects {cin} input channels, input {tuple(x.shape)} has {c}"
        )
    ho = conv_transpose_output_size(h, kh, sh, ph)
    wo = conv_transpose_output_size(w, kw, sw, pw)
    if ho <= 0 or wo <= 0:
        raise ConfigurationError(
            f"conv_transpose2d output extent {ho}×{wo} is not positive (input {h}×{w}, kernel {kh}×{kw}, stride {sh}, padding {ph})"
        )
    if bias is not None and bias.shape != (cout,):
        raise ConfigurationError(f"bias shape {bias.shape} does not match output channels {cout}")

    full_shape = (n, cout, ho + 2 * ph, wo + 2 * pw)
    x3 = xb.reshape(n, cin, h * w)
    wmat = kernel.data.reshape(cin, -1)
    full = _col2im(wmat.T @ x3, full_shape, kh, kw, sh, sw, h, w)
    out = full[:, :, ph : ph + ho, pw : pw + wo]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out[0] if single else out)

    def backward(g):
        gb = g[None] if single else g
        gp = np.pad(gb, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else gb
        gcols = _im2col(gp, kh, kw, sh, sw, h, w)
        gx = None
        if x.requires_grad:
            gx = (wmat @ gcols).reshape(n, cin, h, w)
            gx = gx[0] if single else gx
        gk = None
        if kernel.requires_grad:
            gk = np.einsum("nip,nqp->iq", x3, gcols, optimize=True).reshape(kernel.shape)
        if bias is None:
            return gx, gk
        return gx, gk, gb.sum(axis=(0, 2, 3))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _node(out, parents, backward)


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping ``factor×factor`` average pooling."""
    xb, single = _batched(x)
    n, c, h, w = xb.shape
    if factor < 1 or h % factor or w % factor:
        raise ConfigurationError(f"pool factor {factor} does not divide extent {h}×{w}")
    if factor == 1:
        return x
    out = xb.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))
    scale = 1.0 / (factor * factor)

    def backward(g):
        gb = g[None] if single else g
        gx = np.repeat(np.repeat(gb, factor, axis=2), factor, axis=3) * scale
        return (gx[0] if single else gx,)

    return _node(out[0] if single else out, (x,), backward)


def upsample_nearest2d(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling by an integer factor."""
    xb, single = _batched(x)
    if factor < 1:
        raise ConfigurationError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    n, c, h, w = xb.shape
    out = np.repeat(np.repeat(xb, factor, axis=2), factor, axis=3)

    def backward(g):
        gb = g[None] if single else g
        gx = gb.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5))
        return (gx[0] if single else gx,)

    return _node(out[0] if single else out, (x,), backward)
