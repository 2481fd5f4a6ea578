"""Self-contained invariant battery behind the `check` subcommand.

Each check prints one PASS/FAIL line; the battery returns the number of
failures so the CLI can turn it into an exit code.
"""

from __future__ import annotations

import numpy as np

from .gaussian import GaussianStat, estimate_gaussian, sample_gaussian
from .linalg import spd_inv_sqrt, spd_sqrt
from .pipeline import AccuracyMatrix, final_and_average_accuracy
from .transport import apply_map_to_stat, ot_map, w2_distance_sq


def _random_spd(rng: np.random.Generator, d: int) -> np.ndarray:
    a = rng.standard_normal((d, d))
    return a @ a.T + d * np.eye(d)


def _random_stat(rng: np.random.Generator, d: int) -> GaussianStat:
    return GaussianStat(
        mean=rng.standard_normal(d), covariance=_random_spd(rng, d), count=1
    )


def check_transport_exactness(trials: int = 25, dims=(2, 8, 16)) -> bool:
    rng = np.random.default_rng(7)
    for d in dims:
        for _ in range(trials):
            pre, post = _random_stat(rng, d), _random_stat(rng, d)
            pushed = apply_map_to_stat(ot_map(pre, post), pre)
            if w2_distance_sq(pushed, post) >= 1e-6:
                return False
    return True


def check_scalar_oracles() -> bool:
    a = GaussianStat(mean=[0.0], covariance=[[1.0]], count=1)
    b = GaussianStat(mean=[2.0], covariance=[[4.0]], count=1)
    c = GaussianStat(mean=[3.0], covariance=[[1.0]], count=1)
    transport = ot_map(a, b)
    return (
        abs(transport.linear[0, 0] - 2.0) < 1e-10
        and abs(transport.offset[0] - 2.0) < 1e-10
        and abs(w2_distance_sq(a, c) - 9.0) < 1e-10
    )


def check_spd_roots() -> bool:
    rng = np.random.default_rng(11)
    for d in (2, 8, 32):
        m = _random_spd(rng, d)
        root = spd_sqrt(m)
        if np.linalg.norm(root @ root - m) / np.linalg.norm(m) > 1e-8:
            return False
        whitened = spd_inv_sqrt(m) @ m @ spd_inv_sqrt(m)
        if np.linalg.norm(whitened - np.eye(d)) > 1e-6:
            return False
    return True


def check_sampling_moments() -> bool:
    rng = np.random.default_rng(13)
    stat = estimate_gaussian(rng.standard_normal((2000, 3)))
    draws = sample_gaussian(stat, 50_000, np.random.default_rng(5))
    mean_err = np.max(np.abs(draws.mean(axis=0) - stat.mean))
    cov_err = np.max(np.abs(np.cov(draws, rowvar=False, ddof=0) - stat.covariance))
    return mean_err < 0.05 and cov_err < 0.05


def check_metric_formulas() -> bool:
    r = np.array([[80.0, np.nan], [60.0, 70.0]])
    a_b, a_bar = final_and_average_accuracy(AccuracyMatrix(values=r))
    return a_b == 65.0 and a_bar == 72.5


CHECKS = (
    ("transport exactness", check_transport_exactness),
    ("scalar transport oracles", check_scalar_oracles),
    ("spd square roots", check_spd_roots),
    ("gaussian sampling moments", check_sampling_moments),
    ("accuracy metric formulas", check_metric_formulas),
)


def run_checks(echo=print) -> int:
    """Run every check; returns the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        ok = fn()
        echo(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1
    return failures
