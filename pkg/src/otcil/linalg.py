"""Symmetric positive-definite matrix kernels.

Square roots and inverse square roots are computed via symmetric
eigendecomposition; eigenvalues are floored at ``EIG_FLOOR`` so that
inversion is total even for nearly singular inputs.
"""

from __future__ import annotations

import numpy as np

# Absolute elementwise tolerance for symmetry checks
SYM_TOL: float = 1e-8

# Eigenvalues below this floor are clamped before taking roots
EIG_FLOOR: float = 1e-10


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return the symmetric part (M + M^T) / 2."""
    return 0.5 * (m + m.T)


def check_symmetric(m: np.ndarray, tol: float = SYM_TOL) -> np.ndarray:
    """Validate that ``m`` is a square symmetric float matrix.

    Raises ``ValueError("not symmetric")`` if the asymmetry exceeds ``tol``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("not symmetric: input must be a square matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("not symmetric: non-finite entries")
    if not np.allclose(m, m.T, rtol=0.0, atol=tol):
        raise ValueError("not symmetric")
    return m


def _eig_transform(m: np.ndarray, fn) -> np.ndarray:
    m = check_symmetric(m)
    vals, vecs = np.linalg.eigh(m)
    vals = np.maximum(vals, EIG_FLOOR)
    out = (vecs * fn(vals)) @ vecs.T
    return symmetrize(out)


def spd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric square root R of an SPD matrix, R @ R = M.

    Eigenvalues below ``EIG_FLOOR`` are clamped to the floor before the
    root, so PSD inputs with tiny negative round-off eigenvalues are
    accepted.
    """
    return _eig_transform(m, np.sqrt)


def spd_inv_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of an SPD matrix.

    The eigenvalue floor is applied before reciprocation, so the result
    is always finite.
    """
    return _eig_transform(m, lambda v: 1.0 / np.sqrt(v))


def floor_eigenvalues(m: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Clamp eigenvalues of a symmetric matrix at ``floor``.

    Returns the input unchanged (beyond symmetrization) when already
    strictly above the floor.
    """
    m = symmetrize(np.asarray(m, dtype=np.float64))
    vals, vecs = np.linalg.eigh(m)
    if vals.min() >= floor:
        return m
    vals = np.maximum(vals, floor)
    return symmetrize((vecs * vals) @ vecs.T)
