"""Closed-form 2-Wasserstein distance and transport maps between Gaussians.

The optimal map between N(mu_a, S_a) and N(mu_b, S_b) is the affine
transformation x -> T x + b with

    T = S_a^{-1/2} (S_a^{1/2} S_b S_a^{1/2})^{1/2} S_a^{-1/2}
    b = mu_b - T mu_a

and T symmetric positive definite for SPD inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import GaussianStat
from .linalg import spd_inv_sqrt, spd_sqrt, symmetrize


@dataclass(frozen=True)
class TransportMap:
    """Affine map x -> linear @ x + offset."""

    linear: np.ndarray
    offset: np.ndarray

    def __post_init__(self) -> None:
        lin = np.asarray(self.linear, dtype=np.float64)
        off = np.asarray(self.offset, dtype=np.float64)
        if lin.ndim != 2 or lin.shape[0] != lin.shape[1]:
            raise ValueError("linear part must be square")
        if off.shape != (lin.shape[0],):
            raise ValueError("offset dimension does not match linear part")
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(off))):
            raise ValueError("non-finite transport map")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "offset", off)

    @property
    def dim(self) -> int:
        return int(self.offset.size)

    @staticmethod
    def identity(dim: int) -> "TransportMap":
        return TransportMap(np.eye(dim), np.zeros(dim))


def w2_distance_sq(a: GaussianStat, b: GaussianStat) -> float:
    """Squared Bures-Wasserstein distance between two Gaussians.

    The trace term is clamped at zero; round-off can otherwise produce
    tiny negative values for nearly identical inputs.
    """
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    mean_term = float(np.sum((a.mean - b.mean) ** 2))
    root_a = spd_sqrt(a.covariance)
    cross = spd_sqrt(symmetrize(root_a @ b.covariance @ root_a))
    trace_term = float(np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * np.trace(cross))
    return mean_term + max(trace_term, 0.0)


def ot_map(pre: GaussianStat, post: GaussianStat) -> TransportMap:
    """Optimal affine map pushing ``pre`` exactly onto ``post``."""
    if pre.dim != post.dim:
        raise ValueError("dimension mismatch")
    root = spd_sqrt(pre.covariance)
    inv_root = spd_inv_sqrt(pre.covariance)
    mid = spd_sqrt(symmetrize(root @ post.covariance @ root))
    linear = symmetrize(inv_root @ mid @ inv_root)
    if not np.all(np.isfinite(linear)):
        raise ValueError("degenerate source")
    offset = post.mean - linear @ pre.mean
    return TransportMap(linear=linear, offset=offset)


def apply_map_to_stat(transport: TransportMap, stat: GaussianStat) -> GaussianStat:
    """Push a Gaussian through an affine map: (T mu + b, T Sigma T^T)."""
    if transport.dim != stat.dim:
        raise ValueError("dimension mismatch")
    t = transport.linear
    mean = t @ stat.mean + transport.offset
    cov = symmetrize(t @ stat.covariance @ t.T)
    return GaussianStat(mean=mean, covariance=cov, count=stat.count)


def calibrate_memory(
    transport: TransportMap, memory: "dict[int, GaussianStat]"
) -> "dict[int, GaussianStat]":
    """Apply the map to every stored class statistic.

    Builds a new mapping; the input is never modified, and any per-class
    failure aborts the whole calibration.
    """
    return {cid: apply_map_to_stat(transport, stat) for cid, stat in memory.items()}


def ot_map_per_class_averaged(
    pre_stats: "list[GaussianStat]", post_stats: "list[GaussianStat]"
) -> TransportMap:
    """Average of per-class transport maps (ablation variant).

    Computes one map per aligned (pre, post) pair and averages the
    parameters elementwise. The result is symmetrized but not optimal
    for any single pair.
    """
    if len(pre_stats) != len(post_stats):
        raise ValueError("length mismatch")
    if not pre_stats:
        raise ValueError("no class pairs")
    maps = [ot_map(p, q) for p, q in zip(pre_stats, post_stats)]
    linear = symmetrize(np.mean([m.linear for m in maps], axis=0))
    offset = np.mean([m.offset for m in maps], axis=0)
    return TransportMap(linear=linear, offset=offset)


def compose_maps(first: TransportMap, second: TransportMap) -> TransportMap:
    """Affine composition: applying ``first`` then ``second``.

    The composed linear part is generally not symmetric; the result is a
    plain affine map, not an optimal transport map.
    """
    if first.dim != second.dim:
        raise ValueError("dimension mismatch")
    return TransportMap(
        linear=second.linear @ first.linear,
        offset=second.linear @ first.offset + second.offset,
    )
