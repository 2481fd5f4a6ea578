"""Per-class Gaussian feature statistics.

Estimation uses the Ledoit-Wolf shrinkage estimator toward the scaled
identity target (trace(S)/d) * I with 1/n covariance normalization, so a
single sample is well defined and every estimate is strictly positive
definite after the eigenvalue floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import EIG_FLOOR, floor_eigenvalues, symmetrize

# Absolute symmetry tolerance of stored covariances
COV_SYM_TOL: float = 1e-12


@dataclass(frozen=True)
class GaussianStat:
    """Mean, covariance, and sample count of one class's features.

    Attributes:
        mean: length-d mean vector
        covariance: d x d symmetric PSD matrix
        count: number of samples that produced the estimate
    """

    mean: np.ndarray
    covariance: np.ndarray
    count: int

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        if cov.ndim != 2 or cov.shape != (mean.size, mean.size):
            raise ValueError("covariance dimension does not match mean")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("non-finite statistic")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=COV_SYM_TOL):
            raise ValueError("covariance not symmetric")
        if self.count < 0:
            raise ValueError("count must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "count", int(self.count))

    @property
    def dim(self) -> int:
        return int(self.mean.size)


@dataclass(frozen=True)
class FeatureBatch:
    """Labeled batch of feature rows with their owning task ids."""

    features: np.ndarray
    labels: np.ndarray
    task_ids: np.ndarray

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        tasks = np.asarray(self.task_ids, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if labels.shape != (feats.shape[0],) or tasks.shape != (feats.shape[0],):
            raise ValueError("labels/task_ids length mismatch")
        if not np.all(np.isfinite(feats)):
            raise ValueError("invalid feature")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "task_ids", tasks)

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @staticmethod
    def empty(dim: int) -> "FeatureBatch":
        return FeatureBatch(
            np.zeros((0, dim)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        )

    @staticmethod
    def concat(batches: "list[FeatureBatch]") -> "FeatureBatch":
        batches = [b for b in batches if len(b) > 0]
        if not batches:
            raise ValueError("no samples")
        return FeatureBatch(
            np.concatenate([b.features for b in batches]),
            np.concatenate([b.labels for b in batches]),
            np.concatenate([b.task_ids for b in batches]),
        )


def _validate_features(features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("no samples")
    if x.shape[1] == 0:
        raise ValueError("no samples: zero-dimensional features")
    if not np.all(np.isfinite(x)):
        raise ValueError("invalid feature")
    return x


def ledoit_wolf_weight(features: np.ndarray) -> float:
    """Shrinkage intensity toward the scaled-identity target.

    Returns lambda in [0, 1]; lambda = 1 for a single sample, where the
    scatter carries no information.
    """
    x = _validate_features(features)
    n, d = x.shape
    if n == 1:
        return 1.0
    xc = x - x.mean(axis=0)
    s = (xc.T @ xc) / n
    mu = np.trace(s) / d
    delta2 = float(np.sum((s - mu * np.eye(d)) ** 2)) / d
    if delta2 <= 0.0:
        return 0.0
    # E||x x^T - S||_F^2 estimate; the cross term collapses to n * ||S||_F^2
    sq_norms = np.einsum("ij,ij->i", xc, xc)
    beta2 = (float(np.sum(sq_norms**2)) / n**2 - float(np.sum(s * s)) / n) / d
    beta2 = min(max(beta2, 0.0), delta2)
    return float(np.clip(beta2 / delta2, 0.0, 1.0))


def estimate_gaussian(features: np.ndarray) -> GaussianStat:
    """Ledoit-Wolf shrunk Gaussian estimate of a feature sample.

    The covariance is (1 - lambda) * S + lambda * (tr(S)/d) * I with S the
    1/n-normalized scatter, then eigenvalue-floored so the result is
    strictly positive definite.
    """
    x = _validate_features(features)
    n, d = x.shape
    mean = x.mean(axis=0)
    xc = x - mean
    s = (xc.T @ xc) / n
    lam = ledoit_wolf_weight(x)
    mu = np.trace(s) / d
    cov = (1.0 - lam) * s + lam * mu * np.eye(d)
    cov = floor_eigenvalues(symmetrize(cov), EIG_FLOOR)
    return GaussianStat(mean=mean, covariance=cov, count=n)


def sample_gaussian(stat: GaussianStat, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n i.i.d. rows from N(mean, covariance) via Cholesky.

    If the factorization fails, 1e-8 * I jitter is added and the attempt
    is retried once. Deterministic for a given generator state.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cov = stat.covariance
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        try:
            chol = np.linalg.cholesky(cov + 1e-8 * np.eye(stat.dim))
        except np.linalg.LinAlgError:
            raise ValueError("degenerate covariance") from None
    z = rng.standard_normal((n, stat.dim))
    return z @ chol.T + stat.mean


def average_stats(stats: "list[GaussianStat]") -> GaussianStat:
    """Arithmetic mean of means and covariances; counts are summed."""
    if not stats:
        raise ValueError("no statistics to average")
    d = stats[0].dim
    if any(s.dim != d for s in stats):
        raise ValueError("dimension mismatch")
    mean = np.mean([s.mean for s in stats], axis=0)
    cov = symmetrize(np.mean([s.covariance for s in stats], axis=0))
    return GaussianStat(mean=mean, covariance=cov, count=sum(s.count for s in stats))
