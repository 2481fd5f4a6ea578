"""Trainable linear feature encoder with unit-norm outputs.

Stands in for a vision backbone at desk scale: a single weight matrix
followed by row-wise L2 normalization, adapted with a symmetric
temperature-scaled contrastive loss against frozen per-class anchor
vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Schedule
from .gaussian import FeatureBatch, GaussianStat, estimate_gaussian

_NORM_EPS = 1e-12


@dataclass(frozen=True)
class Encoder:
    """Linear map with orthonormal-row initialization.

    ``version`` increases by one at every adaptation, including
    zero-learning-rate ones.
    """

    weights: np.ndarray
    version: int = 0

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError("weights must be a matrix")
        if not np.all(np.isfinite(w)):
            raise ValueError("non-finite weights")
        object.__setattr__(self, "weights", w)

    @property
    def d_out(self) -> int:
        return int(self.weights.shape[0])

    @property
    def d_in(self) -> int:
        return int(self.weights.shape[1])


@dataclass(frozen=True)
class AnchorSet:
    """Frozen unit anchor vector per class id."""

    vectors: "dict[int, np.ndarray]"

    def __post_init__(self) -> None:
        for cid, v in self.vectors.items():
            if abs(float(np.linalg.norm(v)) - 1.0) > 1e-8:
                raise ValueError(f"anchor for class {cid} is not unit norm")

    def matrix_for(self, labels: np.ndarray) -> np.ndarray:
        return np.stack([self.vectors[int(y)] for y in labels])


def anchors_for_classes(class_ids, d_out: int, seed: int) -> AnchorSet:
    """Deterministic per-class anchors, independent of generation order."""
    vectors = {}
    for cid in sorted(int(c) for c in class_ids):
        v = np.random.default_rng([seed, cid]).standard_normal(d_out)
        vectors[cid] = v / np.linalg.norm(v)
    return AnchorSet(vectors)


def init_encoder(d_in: int, d_out: int, seed: int) -> Encoder:
    """Random encoder with orthonormal rows; requires d_in >= d_out >= 1."""
    if d_out < 1 or d_in < d_out:
        raise ValueError("require d_in >= d_out >= 1")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((d_in, d_out))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    return Encoder(weights=q.T.copy(), version=0)


def encode(enc: Encoder, inputs: np.ndarray) -> np.ndarray:
    """Project inputs and normalize each row to unit length."""
    x = np.asarray(inputs, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("invalid feature")
    u = x @ enc.weights.T
    norms = np.linalg.norm(u, axis=1)
    if np.any(norms < _NORM_EPS):
        raise ValueError("degenerate input")
    return u / norms[:, None]


def contrastive_loss_and_grad(
    enc: Encoder,
    inputs: np.ndarray,
    labels: np.ndarray,
    anchors: AnchorSet,
    tau: float,
) -> "tuple[float, np.ndarray]":
    """Symmetric batch contrastive loss and its weight gradient.

    Each sample's positive is its class anchor; both softmax directions
    (features over the batch's anchors and anchors over the batch's
    features) are averaged with a -1/(2B) factor.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("contrastive loss undefined")
    z_t = anchors.matrix_for(np.asarray(labels))
    return _contrastive_core(enc.weights, x, z_t, tau)


def _contrastive_core(
    weights: np.ndarray, x: np.ndarray, z_t: np.ndarray, tau: float
) -> "tuple[float, np.ndarray]":
    b = x.shape[0]
    u = x @ weights.T
    norms = np.linalg.norm(u, axis=1)
    if np.any(norms < _NORM_EPS):
        raise ValueError("degenerate input")
    z_v = u / norms[:, None]

    s = z_v @ z_t.T / tau
    # Similarities are bounded by 1/tau, so one global shift keeps exp safe
    e = np.exp(s - s.max())
    p_row = e / e.sum(axis=1, keepdims=True)
    p_col = e / e.sum(axis=0, keepdims=True)

    diag = np.arange(b)
    loss = float(
        -(np.log(p_row[diag, diag]).sum() + np.log(p_col[diag, diag]).sum()) / (2 * b)
    )

    g_s = p_row
    g_s += p_col
    g_s[diag, diag] -= 2.0
    g_s /= 2 * b * tau
    g_z = g_s @ z_t
    # Back through the row normalization
    g_u = (g_z - np.einsum("ij,ij->i", g_z, z_v)[:, None] * z_v) / norms[:, None]
    grad_w = g_u.T @ x
    return loss, grad_w


def adapt_encoder(
    enc: Encoder,
    data: FeatureBatch,
    anchors: AnchorSet,
    schedule: Schedule,
) -> Encoder:
    """Gradient descent on the contrastive loss over the task's data.

    With a nonzero schedule batch size, steps cycle through a seeded
    permutation of the data, reshuffling each epoch; the shuffle is a
    pure function of the encoder version. Anchors stay frozen; the
    encoder version increments exactly once, even when the learning
    rate is zero.
    """
    if len(data) == 0:
        raise ValueError("empty task data")
    if len(data) < 2:
        raise ValueError("contrastive loss undefined")
    w = enc.weights.copy()
    x_all = data.features
    z_all = anchors.matrix_for(data.labels)
    n = x_all.shape[0]
    bs = schedule.batch_size if 0 < schedule.batch_size < n else n
    order_rng = np.random.default_rng([17, enc.version])
    perm = order_rng.permutation(n)
    cursor = 0
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    for t in range(1, schedule.steps + 1):
        if bs < n:
            if cursor + bs > n:
                perm = order_rng.permutation(n)
                cursor = 0
            idx = perm[cursor : cursor + bs]
            cursor += bs
            x, z_t = x_all[idx], z_all[idx]
        else:
            x, z_t = x_all, z_all
        _, grad = _contrastive_core(w, x, z_t, schedule.tau)
        if schedule.optimizer == "adam":
            m = 0.9 * m + 0.1 * grad
            v = 0.999 * v + 0.001 * grad**2
            m_hat = m / (1 - 0.9**t)
            v_hat = v / (1 - 0.999**t)
            w -= schedule.lr * m_hat / (np.sqrt(v_hat) + 1e-8)
        else:
            w -= schedule.lr * grad
    return Encoder(weights=w, version=enc.version + 1)


def extract_class_stats(
    enc: Encoder,
    data: FeatureBatch,
    expected_classes=None,
) -> "dict[int, GaussianStat]":
    """Encode a batch and estimate one Gaussian per class."""
    feats = encode(enc, data.features)
    present = set(int(y) for y in data.labels)
    if expected_classes is not None:
        missing = set(int(c) for c in expected_classes) - present
        if missing:
            raise ValueError(f"missing class samples: {sorted(missing)}")
    stats = {}
    for cid in sorted(present):
        stats[cid] = estimate_gaussian(feats[data.labels == cid])
    return stats
