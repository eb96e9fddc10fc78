"""Dense symmetric linear algebra and batch moment estimation.

Matrices are 2-D float64 arrays in row-major order, vectors are 1-D float64
arrays. Feature batches are (N, d) arrays with one sample per row. Covariances
use the 1/N normalization throughout (benchmark comparability is preferred
over unbiasedness), so downstream distances are reproducible across equal-size
runs.

All functions are pure: inputs are never mutated and results are fresh arrays.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "LinalgError",
    "NotPSDError",
    "sym_eig",
    "spd_sqrt",
    "cross_sqrt_trace",
    "batch_mean",
    "batch_cov",
]

# Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
SYMMETRY_RTOL = 1e-8
# Eigenvalues above -EIG_CLIP_RTOL * trace are treated as float noise and
# clamped to zero; anything below is a genuine negative mode.
EIG_CLIP_RTOL = 1e-10


class LinalgError(ValueError):
    """Bad matrix input: wrong shape, non-finite entries, or asymmetry."""


class NotPSDError(LinalgError):
    """Matrix has an eigenvalue too negative to be float noise."""

    def __init__(self, eigenvalue: float, clip: float):
        self.eigenvalue = float(eigenvalue)
        self.clip = float(clip)
        super().__init__(
            f"matrix is not PSD: eigenvalue {eigenvalue:.6e} below clip threshold "
            f"-{clip:.6e}"
        )


def _as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise LinalgError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise LinalgError(f"{name} contains non-finite entries")
    return a


def _check_symmetric(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    if a.shape[0] != a.shape[1]:
        raise LinalgError(f"{name} must be square, got shape {a.shape}")
    scale = np.linalg.norm(a)
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_RTOL * max(scale, 1e-300):
        raise LinalgError(f"{name} is not symmetric within tolerance")
    return 0.5 * (a + a.T)


def sym_eig(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues, eigenvectors) with eigenvalues sorted descending and
    eigenvectors as orthonormal columns, so ``a ~= V @ diag(w) @ V.T``.
    """
    a = _check_symmetric(_as_matrix(a))
    w, v = np.linalg.eigh(a)
    return w[::-1].copy(), v[:, ::-1].copy()


def spd_sqrt(a) -> np.ndarray:
    """Symmetric PSD square root S of a, with S @ S ~= a.

    Eigenvalues within ``EIG_CLIP_RTOL * trace`` of zero are clamped (float
    noise from near-singular covariances); anything more negative raises
    NotPSDError naming the offending eigenvalue.
    """
    a = _check_symmetric(_as_matrix(a))
    w, v = np.linalg.eigh(a)
    clip = EIG_CLIP_RTOL * max(float(np.trace(a)), 0.0)
    if w[0] < -clip:
        raise NotPSDError(w[0], clip)
    w = np.clip(w, 0.0, None)
    s = (v * np.sqrt(w)) @ v.T
    return 0.5 * (s + s.T)


def cross_sqrt_trace(sigma1, sigma2) -> float:
    """Trace of (sigma1 @ sigma2)^{1/2} for PSD inputs.

    Computed through the symmetric conjugation
    ``tr((S1 @ sigma2 @ S1)^{1/2})`` with ``S1 = sigma1^{1/2}``, which has the
    same trace but avoids square roots of non-symmetric products.
    """
    s1 = spd_sqrt(sigma1)
    sigma2 = _check_symmetric(_as_matrix(sigma2, "sigma2"), "sigma2")
    if sigma2.shape != s1.shape:
        raise LinalgError(
            f"dimension mismatch: {s1.shape} vs {sigma2.shape}"
        )
    inner = s1 @ sigma2 @ s1
    inner = 0.5 * (inner + inner.T)
    w = np.linalg.eigvalsh(inner)
    return float(np.sum(np.sqrt(np.clip(w, 0.0, None))))


def batch_mean(z) -> np.ndarray:
    """Mean feature vector of an (N, d) batch, N >= 1."""
    z = _as_matrix(z, "feature batch")
    if z.shape[0] < 1:
        raise LinalgError("batch_mean requires at least one row")
    return z.mean(axis=0)


def batch_cov(z) -> np.ndarray:
    """Covariance of an (N, d) batch with 1/N normalization, N >= 2.

    The result is symmetrized; tiny negative eigenvalues can still occur for
    N < d and are handled downstream by the PSD clamp in spd_sqrt.
    """
    z = _as_matrix(z, "feature batch")
    n = z.shape[0]
    if n < 2:
        raise LinalgError("batch_cov requires at least two rows")
    centered = z - z.mean(axis=0)
    cov = centered.T @ centered / n
    return 0.5 * (cov + cov.T)
