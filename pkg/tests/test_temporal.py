import numpy as np
import pytest

from sephrnet.autodiff import Tensor, grad_check
from sephrnet.exceptions import ConfigurationError, EmptySequenceError
from sephrnet.temporal import (
    AttentionConfig,
    Lstm,
    LstmConfig,
    MultiHead,
    attention,
    lstm_aggregate,
    mean_aggregate,
    multi_head,
    sinusoidal_positions,
)


def test_attention_matches_formula(rng):
    q, k, v = (rng.normal(size=(5, 4)) for _ in range(3))
    out, w = attention(Tensor(q), Tensor(k), Tensor(v), return_weights=True)
    s = q @ k.T / 2.0
    e = np.exp(s - s.max(axis=1, keepdims=True))
    ref = e / e.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(w.data, ref, atol=1e-12)
    np.testing.assert_allclose(out.data, ref @ v, atol=1e-12)


def test_attention_single_frame_is_identity(rng):
    v = rng.normal(size=(1, 6))
    out = attention(Tensor(rng.normal(size=(1, 6))), Tensor(rng.normal(size=(1, 6))), Tensor(v))
    np.testing.assert_array_equal(out.data, v)


def test_attention_empty_sequence():
    z = Tensor(np.zeros((0, 4)))
    with pytest.raises(EmptySequenceError):
        attention(z, z, z)


def test_attention_shape_mismatch(rng):
    with pytest.raises(ConfigurationError):
        attention(Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 5))), Tensor(rng.normal(size=(3, 4))))


def test_multi_head_config_divisibility():
    with pytest.raises(ConfigurationError, match="divisible"):
        AttentionConfig(d_k=64, n_heads=6).validate()


def test_multi_head_shapes_and_batch_consistency(rng):
    mh = MultiHead(AttentionConfig(d_k=8, n_heads=2), rng)
    seq = Tensor(rng.normal(size=(3, 5, 8)))
    out = multi_head(seq, mh)
    assert out.shape == (3, 8)
    single = mh(seq[1], seq[1], seq[1])
    np.testing.assert_allclose(single.data, out.data[1], atol=1e-12)


def test_multi_head_without_positions_is_order_invariant(rng):
    mh = MultiHead(AttentionConfig(d_k=8, n_heads=2, positional=False), rng)
    seq = rng.normal(size=(6, 8))
    perm = rng.permutation(6)
    a = multi_head(Tensor(seq), mh).data
    b = multi_head(Tensor(seq[perm]), mh).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_positions_make_attention_order_aware(rng):
    mh = MultiHead(AttentionConfig(d_k=8, n_heads=2, positional=True), rng)
    seq = rng.normal(size=(6, 8))
    assert not np.allclose(multi_head(Tensor(seq), mh).data, multi_head(Tensor(seq[::-1].copy()), mh).data)
    pe = sinusoidal_positions(4, 6)
    np.testing.assert_allclose(pe[0], [0, 1, 0, 1, 0, 1])


@pytest.mark.parametrize("seed", range(5))
def test_attention_block_gradient(seed):
    rng = np.random.default_rng(seed)
    mh = MultiHead(AttentionConfig(d_k=4, n_heads=2, value_init="normal"), rng)
    q, k, v = (Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True) for _ in range(3))
    w = rng.normal(size=(2, 4))
    assert grad_check(lambda q, k, v, *p: (mh(q, k, v) * w).sum(), [q, k, v] + mh.parameters()) < 1e-4


def _sigmoid(z):
    return 1 / (1 + np.exp(-z))


def test_lstm_step_matches_hand_equations(rng):
    cfg = LstmConfig(input_dim=3, hidden=2, layers=1, bidirectional=False, output_dim=2)
    lstm = Lstm(cfg, rng)
    cell = lstm.cells[0]
    x, h, c = rng.normal(size=(1, 3)), rng.normal(size=(1, 2)), rng.normal(size=(1, 2))
    h1, c1 = cell(Tensor(x), Tensor(h), Tensor(c))
    z = x @ cell.wx.weight.data.T + h @ cell.wh.weight.data.T
    i, f, g, o = _sigmoid(z[:, 0:2]), _sigmoid(z[:, 2:4]), np.tanh(z[:, 4:6]), _sigmoid(z[:, 6:8])
    c_ref = f * c + i * g
    np.testing.assert_allclose(c1.data, c_ref, atol=1e-12)
    np.testing.assert_allclose(h1.data, o * np.tanh(c_ref), atol=1e-12)


def test_lstm_zero_input_gives_exact_zero(rng):
    lstm = Lstm(LstmConfig(input_dim=6, hidden=5, layers=3, bidirectional=True, output_dim=4), rng)
    out = lstm_aggregate(Tensor(np.zeros((2, 7, 6))), lstm)
    assert out.shape == (2, 4)
    assert np.all(out.data == 0.0)


def test_lstm_rejects_bias_and_empty(rng):
    with pytest.raises(ConfigurationError, match="bias"):
        LstmConfig(bias=True).validate()
    lstm = Lstm(LstmConfig(input_dim=2, hidden=2, layers=1, output_dim=2), rng)
    with pytest.raises(EmptySequenceError):
        lstm(Tensor(np.zeros((1, 0, 2))))


def test_lstm_is_order_aware(rng):
    lstm = Lstm(LstmConfig(input_dim=3, hidden=4, layers=2, output_dim=3), rng)
    seq = rng.normal(size=(5, 3))
    assert not np.allclose(lstm(Tensor(seq)).data, lstm(Tensor(seq[::-1].copy())).data)


@pytest.mark.parametrize("seed", range(5))
def test_lstm_gradient(seed):
    rng = np.random.default_rng(seed)
    lstm = Lstm(LstmConfig(input_dim=3, hidden=2, layers=2, output_dim=2), rng)
    seq = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
    w = rng.normal(size=(2, 2))
    assert grad_check(lambda s, *p: (lstm(s) * w).sum(), [seq] + lstm.parameters(), max_coords=20, seed=seed) < 1e-4


def test_mean_aggregate(rng):
    maps = [Tensor(rng.normal(size=(2, 3))) for _ in range(4)]
    np.testing.assert_allclose(mean_aggregate(maps).data, np.mean([m.data for m in maps], axis=0))
    with pytest.raises(EmptySequenceError):
        mean_aggregate([])
    with pytest.raises(ConfigurationError):
        mean_aggregate([Tensor(np.zeros(2)), Tensor(np.zeros(3))])
    x = Tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
    assert grad_check(lambda x: (mean_aggregate(x, axis=1) ** 2).sum(), [x]) < 1e-6


def _leaky_oracle(x):
    """Per-unit recurrence with every gate at one half: c' = (c + tanh x) / 2, h = tanh(c) / 2."""
    c = np.zeros(x.shape[1])
    for row in x:
        c = 0.5 * c + 0.5 * np.tanh(row)
    return 0.5 * np.tanh(c)


def test_identity_lstm_starts_as_per_unit_leaky_sum(rng):
    lstm = Lstm(LstmConfig(input_dim=4, hidden=4, layers=1, output_dim=4, init="identity"), rng)
    x = rng.normal(size=(5, 4))
    expected = 0.5 * (_leaky_oracle(x) + _leaky_oracle(x[::-1]))
    np.testing.assert_allclose(lstm(Tensor(x)).data, expected, atol=1e-12)


def test_identity_lstm_keeps_features_separate(rng):
    lstm = Lstm(LstmConfig(input_dim=5, hidden=5, layers=3, output_dim=5, init="identity"), rng)
    x = rng.normal(size=(4, 5))
    bumped = x.copy()
    bumped[:, 2] += 1.0
    delta = lstm(Tensor(bumped)).data - lstm(Tensor(x)).data
    assert delta[2] != 0 and not np.delete(delta, 2).any()


def test_identity_lstm_needs_matching_widths(rng):
    with pytest.raises(ConfigurationError, match="identity"):
        Lstm(LstmConfig(input_dim=4, hidden=3, output_dim=4, init="identity"), rng)
    with pytest.raises(ConfigurationError):
        LstmConfig(init="orthogonal").validate()
