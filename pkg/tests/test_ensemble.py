import math

import numpy as np
import pytest

from conftest import tiny_config
from sephrnet.ensemble import (
    EnsembleModel,
    Member,
    adaboost_train,
    ensemble_predict,
    ensemble_scores,
    read_manifest,
    reweight,
    sample_error,
    systematic_sample,
    vote_weight,
    weighted_error,
    write_manifest,
)
from sephrnet.exceptions import ConfigurationError, FormatError
from sephrnet.model import SegmentationModel


class FixedModel:
    """Returns stored per-item probability maps, indexed by the first frame value."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)

    def predict_proba(self, frames):
        return self.probs[frames[:, 0, 0, 0, 0].astype(int)]


def item_frames(n):
    x = np.zeros((n, 1, 1, 2, 2))
    x[:, 0, 0, 0, 0] = np.arange(n)
    return x


def test_sample_error_boundary():
    truth = np.zeros((5, 4), dtype=int)
    pred = truth.copy()
    pred.flat[:4] = 1  # exactly 20%
    assert sample_error(pred, truth, 0.2) == -1
    pred.flat[4] = 1
    assert sample_error(pred, truth, 0.2) == 1
    with pytest.raises(ConfigurationError):
        sample_error(pred, truth, 1.0)


def test_systematic_sampling_properties(rng):
    for _ in range(200):
        m = int(rng.integers(2, 40))
        p = rng.random(m) ** 3 + 1e-9
        p /= p.sum()
        n = int(rng.integers(1, m + 1))
        idx = systematic_sample(p, n, rng)
        assert len(idx) == n == len(np.unique(idx))
        assert idx.min() >= 0 and idx.max() < m


def test_systematic_sampling_follows_weights():
    p = np.array([0.7, 0.1, 0.1, 0.05, 0.05])
    rng = np.random.default_rng(0)
    counts = np.zeros(5)
    for _ in range(4000):
        counts[systematic_sample(p, 2, rng)] += 1
    # item 0 is capped at inclusion 1, the rest share the remaining slot pro rata
    np.testing.assert_allclose(counts / 4000, [1.0, 1 / 3, 1 / 3, 1 / 6, 1 / 6], atol=0.03)


def test_three_item_hand_update():
    probs = np.full(3, 1 / 3)
    errors = np.array([-1, 1, -1])
    eps = weighted_error(probs, errors)
    assert eps == pytest.approx(1 / 3)
    alpha = vote_weight(eps)
    assert alpha == pytest.approx(0.5 * math.log(2))
    np.testing.assert_allclose(reweight(probs, errors, alpha), [0.25, 0.5, 0.25], rtol=1e-15)


@pytest.mark.parametrize("err", [-1, 1])
def test_uniform_errors_leave_probs_unchanged(err, rng):
    p = rng.random(7)
    p /= p.sum()
    e = np.full(7, err)
    np.testing.assert_allclose(reweight(p, e, vote_weight(weighted_error(p, e))), p, rtol=1e-15)


def test_weighted_error_clamps():
    assert weighted_error(np.full(4, 0.25), -np.ones(4)) == 1e-6
    assert weighted_error(np.full(4, 0.25), np.ones(4)) == 1 - 1e-6


def test_boosting_keeps_a_positive_distribution(rng):
    truth = rng.integers(0, 2, size=(12, 2, 2))
    preds = [np.where(rng.random(truth.shape) < 0.3, 1 - truth, truth) for _ in range(6)]
    seen = []

    def fit(idx, m):
        seen.append(idx)
        return m

    ens = adaboost_train(12, fit, lambda m: preds[m], truth, n_members=6, seed=3)
    assert ens.n_members == 6 and [len(i) for i in seen] == [10] * 6
    assert (ens.sample_probs > 0).all() and ens.sample_probs.sum() == pytest.approx(1.0, abs=1e-15)
    for h in ens.history:
        assert 0 < h["epsilon"] < 1


def test_single_member_equals_base():
    rng = np.random.default_rng(4)
    p = rng.dirichlet(np.ones(3), size=(5, 2, 2)).transpose(0, 3, 1, 2)
    base = FixedModel(p)
    truth = np.argmax(p, axis=1)
    ens = adaboost_train(5, lambda idx, m: base, lambda m: np.argmax(m.predict_proba(item_frames(5)), 1), truth, n_members=1)
    x = item_frames(5)
    scores, labels = ensemble_predict(ens, x)
    np.testing.assert_array_equal(labels, np.argmax(base.predict_proba(x), axis=1))


def test_vote_is_alpha_scale_invariant_and_respects_zero_weights(rng):
    x = item_frames(4)
    members = [FixedModel(rng.dirichlet(np.ones(3), size=(4, 3, 3)).transpose(0, 3, 1, 2)) for _ in range(3)]
    a = np.array([0.3, 1.2, 0.7])
    lab = np.argmax(ensemble_scores(members, a, x), axis=1)
    np.testing.assert_array_equal(lab, np.argmax(ensemble_scores(members, 5 * a, x), axis=1))
    only_first = np.argmax(ensemble_scores(members[:2], [1.0, 0.0], x), axis=1)
    np.testing.assert_array_equal(only_first, np.argmax(members[0].predict_proba(x), axis=1))
    same = np.argmax(ensemble_scores([members[1]] * 3, a, x), axis=1)
    np.testing.assert_array_equal(same, np.argmax(members[1].predict_proba(x), axis=1))


def test_three_member_hand_summed_pixel():
    # one item, one pixel, two classes
    probs = [[0.9, 0.1], [0.3, 0.7], [0.4, 0.6]]
    members = [FixedModel(np.array(p).reshape(1, 2, 1, 1)) for p in probs]
    x = np.zeros((1, 1, 1, 1, 1))
    scores = ensemble_scores(members, [1.0, 0.5, 0.5], x)
    np.testing.assert_allclose(scores[0, :, 0, 0], [0.9 + 0.15 + 0.2, 0.1 + 0.35 + 0.3])
    assert np.argmax(scores[0, :, 0, 0]) == 0
    scores = ensemble_scores(members, [0.5, 1.0, 1.0], x)
    assert np.argmax(scores[0, :, 0, 0]) == 1


def test_real_members_vote(rng):
    x = rng.normal(size=(3, 2, 2, 8, 8))
    models = [SegmentationModel(tiny_config(), s) for s in range(2)]
    for m in models:
        m(x)  # one training-mode pass records batch-norm statistics
    ens = EnsembleModel([Member(m, a) for m, a in zip(models, (0.4, 0.9))])
    p = sum(a * m.predict_proba(x) for m, a in zip(models, (0.4, 0.9)))
    np.testing.assert_allclose(ens.predict_scores(x, batch_size=3), p, atol=1e-12)
    np.testing.assert_array_equal(ens.predict(x, batch_size=3), np.argmax(p, axis=1))
    with pytest.raises(ConfigurationError):
        ensemble_scores([], [], x)


def test_manifest_round_trip(tmp_path, rng):
    truth = rng.integers(0, 2, size=(6, 2, 2))
    ens = adaboost_train(6, lambda idx, m: m, lambda m: (truth + m) % 2, truth, n_members=3, seed=1)
    path = tmp_path / "ensemble.json"
    write_manifest(path, ens, ["a.spck", "b.spck", "c.spck"])
    doc = read_manifest(path)
    assert [m["checkpoint"] for m in doc["members"]] == ["a.spck", "b.spck", "c.spck"]
    assert [m["alpha"] for m in doc["members"]] == list(ens.alphas)
    assert doc["sample_probs"] == list(ens.sample_probs)
    path.write_text("{")
    with pytest.raises(FormatError):
        read_manifest(path)
    path.write_text('{"version": 7}')
    with pytest.raises(FormatError, match="version"):
        read_manifest(path)
    with pytest.raises(ConfigurationError):
        write_manifest(path, ens, ["a"])
