"""Dense linear algebra for the linear model: truncated SVD, complements, projections.

Matrices are plain ``float64`` numpy arrays. The SVD itself is delegated to
LAPACK (``numpy.linalg.svd``, a Golub-Kahan bidiagonalization driver); this
module adds validation, truncation and a deterministic sign convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lisae.errors import DataError, ParameterError, PreconditionError

ORTHO_TOL = 1e-10


def as_matrix(X, name: str = "X") -> np.ndarray:
    """Return ``X`` as a finite 2-D float64 array or raise."""
    A = np.asarray(X, dtype=np.float64)
    if A.ndim != 2:
        raise ParameterError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise DataError(f"{name} contains non-finite entries")
    return A


def as_vector(x, name: str = "x") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ParameterError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DataError(f"{name} contains non-finite entries")
    return v


def fix_signs(U: np.ndarray, V: np.ndarray | None = None):
    """Flip columns so each column of ``U`` has its largest-magnitude entry positive.

    The matching columns of ``V`` are flipped too, so ``U diag(s) V^T`` is unchanged.
    """
    U = U.copy()
    if U.shape[1] == 0:
        return (U, None if V is None else V.copy())
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U *= signs
    if V is None:
        return U, None
    return U, V * signs


def truncated_svd(X, r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rank-``r`` SVD of an ``m x n`` matrix.

    Args:
        X: Data matrix, shape ``(m, n)``.
        r: Number of leading singular triplets to keep, ``1 <= r <= min(m, n)``.

    Returns:
        ``(U_r, sigma, V_r)`` with shapes ``(m, r)``, ``(r,)``, ``(n, r)``.
        Singular values are nonincreasing and each column of ``U_r`` has its
        largest-magnitude entry positive.
    """
    A = as_matrix(X)
    m, n = A.shape
    if not isinstance(r, (int, np.integer)) or not 1 <= r <= min(m, n):
        raise ParameterError(f"rank r={r!r} out of range [1, {min(m, n)}]")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    U_r, V_r = fix_signs(U[:, :r], Vt[:r].T)
    return U_r, s[:r].copy(), V_r


def check_orthonormal(U: np.ndarray, tol: float = 1e-8, name: str = "U_r") -> None:
    G = U.T @ U
    err = np.max(np.abs(G - np.eye(U.shape[1]))) if U.size else 0.0
    if err > tol:
        raise PreconditionError(f"{name} columns are not orthonormal (max |G - I| = {err:.3g})")


def orthogonal_complement_basis(U_r) -> np.ndarray:
    """Orthonormal basis ``U_c`` of the complement of ``Col(U_r)``, shape ``(m, m - r)``."""
    U = as_matrix(U_r, "U_r")
    m, r = U.shape
    if r > m:
        raise ParameterError(f"U_r has more columns ({r}) than rows ({m})")
    check_orthonormal(U)
    if r == m:
        return np.zeros((m, 0))
    Q, _ = np.linalg.qr(U, mode="complete")
    U_c, _ = fix_signs(Q[:, r:])
    # one refinement pass removes the O(eps * cond) leak back into Col(U_r)
    U_c -= U @ (U.T @ U_c)
    U_c, _ = np.linalg.qr(U_c)
    U_c, _ = fix_signs(U_c)
    return U_c


@dataclass(frozen=True)
class OrthoDecomposition:
    """Split of a vector into its part in ``Col(U_r)`` and the residual."""

    parallel: np.ndarray
    orthogonal: np.ndarray


def decompose(x, U_r) -> OrthoDecomposition:
    """Project ``x`` onto ``Col(U_r)``; ``orthogonal = x - parallel``."""
    v = as_vector(x)
    U = as_matrix(U_r, "U_r")
    if U.shape[0] != v.shape[0]:
        raise ParameterError(f"dimension mismatch: x has {v.shape[0]} entries, U_r has {U.shape[0]} rows")
    parallel = U @ (U.T @ v)
    return OrthoDecomposition(parallel=parallel, orthogonal=v - parallel)


def subspace_coords(x, U_r, U_c) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates ``(z, c)`` with ``x = U_r z + U_c c``."""
    v = as_vector(x)
    return U_r.T @ v, U_c.T @ v


def save_matrix_csv(path: str | Path, X) -> None:
    A = as_matrix(X)
    np.savetxt(path, A, delimiter=",", fmt="%.17g")


def load_matrix_csv(path: str | Path) -> np.ndarray:
    A = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return as_matrix(A)
