import numpy as np
import pytest

from sephrnet.autodiff import Tensor, grad_check
from sephrnet.encoder import (
    EncoderConfig,
    build_encoder,
    closed_form_param_count,
    conv_weight_count,
    encode,
    separable_saving,
    spatial_layer_shapes,
)
from sephrnet.exceptions import ConfigurationError


def tiny(**kw):
    base = dict(
        in_channels=2,
        input_size=(8, 8),
        stem_channels=2,
        stem_depth=1,
        n_stages=2,
        branches_per_stage=(1, 2),
        channels_per_branch=(2, 3),
        embed_dim=8,
        pool_extent=2,
        shallow_separable_depth=1,
    )
    base.update(kw)
    return EncoderConfig(**base)


def test_default_feature_shapes():
    enc = build_encoder(EncoderConfig(), seed=0)
    feats = enc.features(Tensor(np.random.default_rng(0).normal(size=(2, 4, 32, 32))))
    shapes = [[f.shape[1:] for f in stage] for stage in feats]
    assert shapes == [
        [(16, 32, 32)],
        [(16, 32, 32), (32, 16, 16)],
        [(16, 32, 32), (32, 16, 16), (64, 8, 8)],
    ]


@pytest.mark.parametrize("pool", ["grid", "flatten", "avg"])
def test_heads_emit_embed_dim_vectors(pool):
    cfg = tiny(pool=pool)
    enc = build_encoder(cfg)
    outs = enc(Tensor(np.random.default_rng(0).normal(size=(3, 2, 8, 8))))
    assert [o.shape for o in outs] == [(3, 8)] * cfg.n_heads


def test_encode_single_frame_and_single_head():
    cfg = tiny(n_heads=1)
    emb = encode(build_encoder(cfg), Tensor(np.random.default_rng(0).normal(size=(2, 8, 8))))
    assert emb.q.shape == (8,)
    np.testing.assert_array_equal(emb.q.data, emb.v.data)


@pytest.mark.parametrize("cfg", [EncoderConfig(), EncoderConfig(shallow_separable_depth=0), tiny(), tiny(pool="flatten"), tiny(pool="avg", residual=True)])
def test_param_count_matches_closed_form(cfg):
    assert build_encoder(cfg).param_count() == closed_form_param_count(cfg)


def test_separable_saving_equals_param_difference():
    sep = EncoderConfig()
    std = EncoderConfig(shallow_separable_depth=0)
    delta = build_encoder(std).param_count() - build_encoder(sep).param_count()
    k = sep.kernel
    shapes = spatial_layer_shapes(sep)[: sep.shallow_separable_depth]
    assert delta > 0
    assert delta == separable_saving(sep) == sum((k * k - 2 * k) * ci * co for ci, co in shapes)


def test_conv_weight_count():
    assert conv_weight_count(4, 8, 3, False) == 288
    assert conv_weight_count(4, 8, 3, True) == 3 * 4 * 8 + 3 * 8 * 8


@pytest.mark.parametrize(
    "kw,match",
    [
        (dict(input_size=(9, 9)), "divisible"),
        (dict(input_size=(30, 30)), "pool_extent"),
        (dict(branches_per_stage=(2, 1)), "never decrease"),
        (dict(channels_per_branch=(2,)), "channel counts"),
        (dict(kernel=4), "odd"),
        (dict(shallow_separable_depth=99), "shallow_separable_depth"),
        (dict(pool="max"), "pool"),
    ],
)
def test_invalid_configs(kw, match):
    with pytest.raises(ConfigurationError, match=match):
        tiny(**kw).validate()


def test_wrong_frame_shape_rejected():
    enc = build_encoder(tiny())
    with pytest.raises(ConfigurationError, match="channels"):
        enc(Tensor(np.zeros((1, 3, 8, 8))))
    with pytest.raises(ConfigurationError, match="extent"):
        enc(Tensor(np.zeros((1, 2, 16, 16))))


@pytest.mark.parametrize("seed", range(5))
def test_encoder_gradient(seed):
    rng = np.random.default_rng(seed)
    enc = build_encoder(tiny(), seed=seed)
    x = Tensor(rng.normal(size=(3, 2, 8, 8)), requires_grad=True)
    w = [rng.normal(size=(3, 8)) for _ in enc.heads]

    def f(x, *params):
        return sum((o * wi).sum() for o, wi in zip(enc(x), w))

    params = enc.parameters()
    assert grad_check(f, [x] + params, max_coords=12, seed=seed) < 1e-4
