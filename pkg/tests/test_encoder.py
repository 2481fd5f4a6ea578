import numpy as np
import pytest

from otcil.config import Schedule
from otcil.encoder import (
    AnchorSet,
    Encoder,
    adapt_encoder,
    anchors_for_classes,
    contrastive_loss_and_grad,
    encode,
    extract_class_stats,
    init_encoder,
)
from otcil.gaussian import FeatureBatch, estimate_gaussian


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_init_orthonormal_rows():
    enc = init_encoder(4, 4, seed=0)
    assert np.allclose(enc.weights @ enc.weights.T, np.eye(4), atol=1e-8)


def test_init_deterministic():
    assert np.array_equal(init_encoder(8, 3, seed=5).weights, init_encoder(8, 3, seed=5).weights)


def test_init_rejects_expansion():
    with pytest.raises(ValueError, match="d_in >= d_out"):
        init_encoder(2, 3, seed=0)


def test_encode_identity_weights():
    enc = Encoder(weights=np.eye(3))
    v = unit([1.0, 2.0, 2.0])
    assert np.allclose(encode(enc, v[None, :])[0], v)


def test_encode_scale_invariant():
    enc = init_encoder(5, 3, seed=1)
    v = np.random.default_rng(0).standard_normal((1, 5))
    assert np.allclose(encode(enc, v), encode(enc, 2.0 * v))


def test_encode_unit_norms():
    enc = init_encoder(6, 4, seed=2)
    x = np.random.default_rng(1).standard_normal((10, 6))
    norms = np.linalg.norm(encode(enc, x), axis=1)
    assert np.allclose(norms, 1.0, atol=1e-10)


def test_encode_rejects_nan():
    enc = init_encoder(3, 2, seed=0)
    with pytest.raises(ValueError, match="invalid feature"):
        encode(enc, np.array([[np.nan, 0.0, 0.0]]))


def test_encode_rejects_null_input():
    enc = Encoder(weights=np.array([[1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="degenerate input"):
        encode(enc, np.zeros((1, 2)))


def test_contrastive_hand_value():
    # Both features map to their own anchors; anchors orthogonal; tau = 1
    enc = Encoder(weights=np.eye(2))
    anchors = AnchorSet({0: np.array([1.0, 0.0]), 1: np.array([0.0, 1.0])})
    x = np.array([[3.0, 0.0], [0.0, 0.5]])
    loss, _ = contrastive_loss_and_grad(enc, x, np.array([0, 1]), anchors, tau=1.0)
    assert loss == pytest.approx(np.log(1.0 + np.exp(-1.0)), abs=1e-12)


def test_contrastive_duplicated_batch():
    rng = np.random.default_rng(3)
    enc = init_encoder(4, 3, seed=4)
    anchors = anchors_for_classes([0, 1], 3, seed=7)
    x = rng.standard_normal((4, 4))
    y = np.array([0, 1, 0, 1])
    loss2, _ = contrastive_loss_and_grad(
        enc, np.concatenate([x, x]), np.concatenate([y, y]), anchors, tau=0.5
    )
    # Direct re-evaluation of the doubled batch with a naive implementation
    z = encode(enc, np.concatenate([x, x]))
    t = anchors.matrix_for(np.concatenate([y, y]))
    s = z @ t.T / 0.5
    b = s.shape[0]
    row = np.diag(s) - np.log(np.sum(np.exp(s), axis=1))
    col = np.diag(s) - np.log(np.sum(np.exp(s), axis=0))
    expected = -(row.sum() + col.sum()) / (2 * b)
    assert loss2 == pytest.approx(expected, abs=1e-10)


def test_contrastive_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    enc = init_encoder(5, 3, seed=6)
    anchors = anchors_for_classes([0, 1, 2], 3, seed=8)
    x = rng.standard_normal((6, 5))
    y = np.array([0, 1, 2, 0, 1, 2])
    _, grad = contrastive_loss_and_grad(enc, x, y, anchors, tau=0.3)
    eps = 1e-6
    w = enc.weights
    for i in range(w.shape[0]):
        for j in range(w.shape[1]):
            wp, wm = w.copy(), w.copy()
            wp[i, j] += eps
            wm[i, j] -= eps
            lp, _ = contrastive_loss_and_grad(Encoder(weights=wp), x, y, anchors, tau=0.3)
            lm, _ = contrastive_loss_and_grad(Encoder(weights=wm), x, y, anchors, tau=0.3)
            fd = (lp - lm) / (2 * eps)
            assert abs(grad[i, j] - fd) < 1e-4 * max(1.0, abs(fd))


def test_contrastive_rejects_tiny_batch():
    enc = init_encoder(3, 2, seed=0)
    anchors = anchors_for_classes([0], 2, seed=0)
    with pytest.raises(ValueError, match="contrastive loss undefined"):
        contrastive_loss_and_grad(enc, np.ones((1, 3)), np.array([0]), anchors, tau=1.0)


def test_anchors_unit_and_order_independent():
    a = anchors_for_classes([3, 1, 2], 4, seed=9)
    b = anchors_for_classes([1, 2, 3], 4, seed=9)
    for cid in (1, 2, 3):
        assert np.array_equal(a.vectors[cid], b.vectors[cid])
        assert abs(np.linalg.norm(a.vectors[cid]) - 1.0) < 1e-8


def test_adapt_zero_lr():
    enc = init_encoder(4, 3, seed=10)
    anchors = anchors_for_classes([0, 1], 3, seed=11)
    rng = np.random.default_rng(6)
    data = FeatureBatch(rng.standard_normal((8, 4)), np.array([0, 1] * 4), np.zeros(8))
    out = adapt_encoder(enc, data, anchors, Schedule(steps=5, lr=0.0))
    assert np.array_equal(out.weights, enc.weights)
    assert out.version == enc.version + 1


def test_adapt_single_class():
    enc = init_encoder(4, 3, seed=12)
    anchors = anchors_for_classes([0], 3, seed=13)
    rng = np.random.default_rng(7)
    data = FeatureBatch(rng.standard_normal((6, 4)), np.zeros(6, dtype=int), np.zeros(6))
    out = adapt_encoder(enc, data, anchors, Schedule(steps=10, lr=0.01))
    assert np.all(np.isfinite(out.weights))


def test_adapt_pulls_features_toward_anchors():
    rng = np.random.default_rng(8)
    enc = init_encoder(6, 4, seed=14)
    anchors = anchors_for_classes([0, 1], 4, seed=15)
    x = np.concatenate(
        [rng.standard_normal((30, 6)) + 3.0, rng.standard_normal((30, 6)) - 3.0]
    )
    y = np.array([0] * 30 + [1] * 30)
    data = FeatureBatch(x, y, np.zeros(60))

    def mean_cosine(e):
        z = encode(e, x)
        return float(np.mean(np.einsum("ij,ij->i", z, anchors.matrix_for(y))))

    before = mean_cosine(enc)
    after = mean_cosine(adapt_encoder(enc, data, anchors, Schedule(steps=300, lr=0.05)))
    assert after > before


def test_adapt_rejects_empty():
    enc = init_encoder(3, 2, seed=0)
    anchors = anchors_for_classes([0], 2, seed=0)
    with pytest.raises(ValueError, match="empty task data"):
        adapt_encoder(enc, FeatureBatch.empty(3), anchors, Schedule(steps=1, lr=0.1))


def test_adapt_minibatch_deterministic():
    enc = init_encoder(4, 3, seed=16)
    anchors = anchors_for_classes([0, 1], 3, seed=17)
    rng = np.random.default_rng(9)
    data = FeatureBatch(rng.standard_normal((20, 4)), np.array([0, 1] * 10), np.zeros(20))
    sched = Schedule(steps=15, lr=0.05, batch_size=8)
    a = adapt_encoder(enc, data, anchors, sched)
    b = adapt_encoder(enc, data, anchors, sched)
    assert np.array_equal(a.weights, b.weights)


def test_extract_stats_composition():
    enc = Encoder(weights=np.eye(3))
    rng = np.random.default_rng(10)
    x = rng.standard_normal((12, 3))
    data = FeatureBatch(x, np.zeros(12, dtype=int), np.zeros(12))
    stats = extract_class_stats(enc, data)
    direct = estimate_gaussian(x / np.linalg.norm(x, axis=1, keepdims=True))
    assert np.allclose(stats[0].mean, direct.mean)
    assert np.allclose(stats[0].covariance, direct.covariance)


def test_extract_stats_permutation_invariant():
    enc = init_encoder(4, 3, seed=18)
    rng = np.random.default_rng(11)
    x = rng.standard_normal((10, 4))
    y = np.array([0, 1] * 5)
    perm = rng.permutation(10)
    a = extract_class_stats(enc, FeatureBatch(x, y, np.zeros(10)))
    b = extract_class_stats(enc, FeatureBatch(x[perm], y[perm], np.zeros(10)))
    for cid in (0, 1):
        assert np.allclose(a[cid].mean, b[cid].mean, atol=1e-12)
        assert np.allclose(a[cid].covariance, b[cid].covariance, atol=1e-12)


def test_extract_stats_group_means():
    enc = init_encoder(4, 3, seed=19)
    rng = np.random.default_rng(12)
    x = rng.standard_normal((16, 4))
    y = np.array([0] * 8 + [1] * 8)
    stats = extract_class_stats(enc, FeatureBatch(x, y, np.zeros(16)))
    z = encode(enc, x)
    for cid in (0, 1):
        assert np.allclose(stats[cid].mean, z[y == cid].mean(axis=0), atol=1e-12)


def test_extract_stats_missing_class():
    enc = init_encoder(3, 2, seed=0)
    data = FeatureBatch(np.ones((2, 3)), np.zeros(2, dtype=int), np.zeros(2))
    with pytest.raises(ValueError, match="missing class samples"):
        extract_class_stats(enc, data, expected_classes=[0, 1])
