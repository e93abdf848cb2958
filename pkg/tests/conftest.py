import numpy as np
import pytest

from sephrnet.autodiff import set_default_dtype
from sephrnet.decoder import DecoderConfig
from sephrnet.encoder import EncoderConfig
from sephrnet.model import ModelConfig
from sephrnet.temporal import AttentionConfig, LstmConfig


@pytest.fixture(autouse=True)
def float64_default():
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def naive_conv2d(x, k, stride=1, pad=0):
    """Direct six-loop cross-correlation, N×C×H×W input."""
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    ph, pw = (pad, pad) if np.isscalar(pad) else pad
    n, c, h, w = x.shape
    co, ci, kh, kw = k.shape
    xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw))
    xp[:, :, ph : ph + h, pw : pw + w] = x
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((n, co, ho, wo))
    for b in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for q in range(ci):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b, q, i * sh + u, j * sw + v] * k[o, q, u, v]
                    out[b, o, i, j] = acc
    return out


def zero_stuff_conv_transpose(x, k, stride, pad):
    """Transposed conv as scatter of each input pixel times the kernel, then crop."""
    n, ci, h, w = x.shape
    _, co, kh, kw = k.shape
    full = np.zeros((n, co, (h - 1) * stride + kh, (w - 1) * stride + kw))
    for b in range(n):
        for q in range(ci):
            for i in range(h):
                for j in range(w):
                    full[b, :, i * stride : i * stride + kh, j * stride : j * stride + kw] += x[b, q, i, j] * k[q]
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (w - 1) * stride - 2 * pad + kw
    return full[:, :, pad : pad + ho, pad : pad + wo]


def tiny_config(paradigm="esd", n_classes=3):
    """Two-stage model on 2×8×8 frames, fast enough for end-to-end tests."""
    return ModelConfig(
        paradigm=paradigm,
        encoder=EncoderConfig(
            in_channels=2, input_size=(8, 8), stem_channels=2, stem_depth=1, n_stages=2,
            branches_per_stage=(1, 2), channels_per_branch=(2, 3), embed_dim=8, pool_extent=2,
        ),
        attention=AttentionConfig(n_heads=2, value_init="normal"),
        lstm=LstmConfig(hidden=3, layers=2),
        decoder=DecoderConfig(seed_channels=2, seed_extent=2, blocks=[(3, 4, 2, 1), (3, 4, 2, 1)], n_classes=n_classes, target=(8, 8)),
    )


# acceptance lines are collected here and repeated in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
