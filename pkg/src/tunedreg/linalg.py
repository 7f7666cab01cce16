"""Primitives for positive semi-definite matrices.

Every weight matrix in the package (prior weights, noise weights, the
marginal covariance ``R = X C X^T + V``) goes through these helpers, so the
rank cutoff is decided in exactly one place: an eigenvalue ``<=
rank_tol * lambda_max`` is treated as an exact zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError

RANK_TOL = 1e-10
"""Relative eigenvalue cutoff shared by all modules."""

RANGE_TOL = 1e-8
"""Default relative tolerance for range-membership tests."""


def _as_square(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix contains non-finite entries")
    return A


def as_psd(A, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Validate and symmetrize a positive semi-definite matrix.

    Asymmetry up to ``rank_tol * (1 + max|A|)`` is removed by averaging with
    the transpose. Negative eigenvalues down to ``-rank_tol * lambda_max`` are
    accepted as rounding; anything more negative is rejected.

    Raises
    ------
    InvalidInputError
        If ``A`` is not square, not finite, not symmetric or indefinite.
    """
    A = _as_square(A)
    scale = float(np.max(np.abs(A))) if A.size else 0.0
    if np.max(np.abs(A - A.T), initial=0.0) > rank_tol * (1.0 + scale):
        raise InvalidInputError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    if A.size:
        w = np.linalg.eigvalsh(A)
        top = max(float(np.max(np.abs(w))), 0.0)
        if w[0] < -rank_tol * top:
            raise InvalidInputError(
                f"matrix is not positive semi-definite (min eigenvalue {w[0]:.3g})"
            )
    return A


@dataclass(frozen=True)
class SpectralFactor:
    """Truncated eigendecomposition ``A = U diag(lam) U^T`` of a PSD matrix.

    ``basis`` has orthonormal columns and ``eigenvalues`` are strictly
    positive, so ``basis.shape[1]`` is the numerical rank.
    """

    basis: np.ndarray
    eigenvalues: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.eigenvalues.size)

    def reconstruct(self) -> np.ndarray:
        return (self.basis * self.eigenvalues) @ self.basis.T

    def pinv(self) -> np.ndarray:
        P = (self.basis / self.eigenvalues) @ self.basis.T
        return 0.5 * (P + P.T)

    def sqrt(self) -> np.ndarray:
        """Return the factor ``L = U diag(sqrt(lam))`` with ``A = L L^T``."""
        return self.basis * np.sqrt(self.eigenvalues)


def spectral_factor(A, rank_tol: float = RANK_TOL) -> SpectralFactor:
    """Factor a PSD matrix, dropping eigenvalues below the rank cutoff."""
    A = as_psd(A, rank_tol)
    w, U = np.linalg.eigh(A)
    top = float(np.max(np.abs(w))) if w.size else 0.0
    keep = w > rank_tol * top
    return SpectralFactor(basis=U[:, keep], eigenvalues=w[keep])


def pseudo_inverse(A, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse of a PSD matrix.

    Computed from the symmetric eigendecomposition, so the result is exactly
    symmetric. The zero matrix maps to the zero matrix.

    Examples
    --------
    >>> pseudo_inverse(np.diag([2.0, 0.0]))
    array([[0.5, 0. ],
           [0. , 0. ]])
    """
    return spectral_factor(A, rank_tol).pinv()


def psd_sqrt(A, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Symmetric square root ``A^{1/2}``."""
    F = spectral_factor(A, rank_tol)
    return (F.basis * np.sqrt(F.eigenvalues)) @ F.basis.T


def range_projector(A, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Orthogonal projector ``A A^+`` onto ``range(A)``."""
    U = spectral_factor(A, rank_tol).basis
    return U @ U.T


def in_range(v, A, tol: float = RANGE_TOL, *, pinv: np.ndarray | None = None) -> bool:
    """Test whether ``v`` lies in ``range(A)``.

    True iff ``||A A^+ v - v|| <= tol * ||v||``. A precomputed ``A^+`` may be
    passed to avoid a second eigendecomposition.
    """
    v = np.asarray(v, dtype=float).ravel()
    A = _as_square(A)
    if A.shape[0] != v.size:
        raise InvalidInputError(f"dimension mismatch: {A.shape} vs {v.size}")
    return range_gap(v, A, pinv=pinv) <= tol


def range_gap(v, A, *, pinv: np.ndarray | None = None) -> float:
    """Relative distance ``||A A^+ v - v|| / ||v||`` of ``v`` from ``range(A)``."""
    v = np.asarray(v, dtype=float).ravel()
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return 0.0
    P = pinv if pinv is not None else pseudo_inverse(A)
    return float(np.linalg.norm(A @ (P @ v) - v) / nv)


def weighted_sq_norm(x, W) -> float:
    """Squared weighted seminorm ``x^T W x`` (clamped at zero)."""
    x = np.asarray(x, dtype=float)
    W = np.asarray(W, dtype=float)
    if x.ndim == 1:
        val = float(x @ W @ x)
    else:
        val = float(np.trace(x.T @ W @ x))
    return max(val, 0.0)


def weighted_norm(x, W) -> float:
    """Weighted seminorm ``||x||_W = sqrt(tr(x^T W x))``."""
    return float(np.sqrt(weighted_sq_norm(x, W)))
