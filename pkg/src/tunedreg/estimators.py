"""Closed-form linear estimators built from a pair of PSD weight matrices.

The central object is the range-constrained weighted estimator

    theta(C, V) = argmin ||y - X theta||^2_{V^+} + ||theta||^2_{C^+}
                  s.t. y - X theta in range(V), theta in range(C),

whose unique solution is ``C X^T R^+ y`` with ``R = X C X^T + V`` whenever
``y`` lies in ``range(R)``. BLUE, the MSE-optimal linear estimator and LMMSE
are all special choices of ``(C, V)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .exceptions import InfeasibleError, InvalidInputError


@dataclass(frozen=True)
class Dataset:
    """Regressor matrix ``X`` (n x d) and response ``y`` (n,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = y.ravel()
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidInputError(f"X must be a non-empty 2-D array, got {X.shape}")
        if X.shape[0] != y.size:
            raise InvalidInputError(
                f"X has {X.shape[0]} rows but y has {y.size} entries"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidInputError("X and y must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def sample_cov(self) -> np.ndarray:
        """Regressor sample covariance ``T = X^T X / n``."""
        return self.X.T @ self.X / self.n


@dataclass(frozen=True)
class WeightPair:
    """Prior weight ``C`` (d x d) and noise weight ``V`` (n x n)."""

    C: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "C", linalg.as_psd(self.C))
        object.__setattr__(self, "V", linalg.as_psd(self.V))

    def scaled(self, alpha: float) -> "WeightPair":
        return WeightPair(alpha * self.C, alpha * self.V)

    def marginal_cov(self, X) -> np.ndarray:
        """``R = X C X^T + V``."""
        X = np.asarray(X, dtype=float)
        R = X @ self.C @ X.T + self.V
        return 0.5 * (R + R.T)


@dataclass
class EstimateReport:
    theta: np.ndarray
    residual_range_gap: float
    objective: float
    weights_used: WeightPair | None
    diagnostics: dict = field(default_factory=dict)


def _check_dims(w: WeightPair, data: Dataset) -> None:
    if w.C.shape[0] != data.d or w.V.shape[0] != data.n:
        raise InvalidInputError(
            f"weights {w.C.shape}/{w.V.shape} do not match data (n={data.n}, d={data.d})"
        )


def estimate_weighted(w: WeightPair, data: Dataset, tol: float = linalg.RANGE_TOL) -> EstimateReport:
    """Range-constrained weighted estimate ``C X^T R^+ y``.

    Parameters
    ----------
    w : WeightPair
        Prior and noise weights.
    data : Dataset
    tol : float
        Relative tolerance of the feasibility test ``y in range(R)``.

    Returns
    -------
    EstimateReport
        ``objective`` is ``||y - X theta||^2_{V^+} + ||theta||^2_{C^+}`` and
        ``diagnostics`` holds the two range residuals of the constraint set.

    Raises
    ------
    InfeasibleError
        If ``y`` is not in ``range(R)``; the constraint set is then empty.
    """
    _check_dims(w, data)
    X, y = data.X, data.y
    R = w.marginal_cov(X)
    R_pinv = linalg.pseudo_inverse(R)
    gap = linalg.range_gap(y, R, pinv=R_pinv)
    if gap > tol:
        raise InfeasibleError(
            f"y is not in range(X C X^T + V): relative gap {gap:.3e} > {tol:.1e}"
        )
    a = R_pinv @ y
    theta = w.C @ (X.T @ a)
    resid = y - X @ theta
    C_pinv = linalg.pseudo_inverse(w.C)
    V_pinv = linalg.pseudo_inverse(w.V)
    objective = linalg.weighted_sq_norm(resid, V_pinv) + linalg.weighted_sq_norm(theta, C_pinv)
    diagnostics = {
        "theta_range_gap": linalg.range_gap(theta, w.C, pinv=C_pinv),
        "residual_in_V_gap": _gap_scaled(resid, w.V, V_pinv, np.linalg.norm(y)),
    }
    return EstimateReport(theta, gap, objective, w, diagnostics)


def _gap_scaled(v, A, A_pinv, ref: float) -> float:
    # residuals can be tiny relative to y; measure against ||y|| instead of ||v||
    if ref == 0.0:
        return 0.0
    return float(np.linalg.norm(A @ (A_pinv @ v) - v) / ref)


def blue(V, data: Dataset, tol: float = linalg.RANGE_TOL) -> EstimateReport:
    """Best linear unbiased estimator for noise weight ``V``.

    Evaluates ``X^+ [I - V M (M V M)^+ M] y`` with ``M = I - X X^+``, the
    minimizer of ``||y - X theta||^2_{V^+}`` subject to the residual lying in
    ``range(V)``. For column-rank-deficient ``X`` the formula still returns
    a minimizer but the unbiasedness claim is void; a ``RuntimeWarning`` is
    emitted and ``diagnostics["rank_deficient"]`` is set.
    """
    V = linalg.as_psd(V)
    X, y = data.X, data.y
    if V.shape[0] != data.n:
        raise InvalidInputError(f"V is {V.shape}, expected ({data.n}, {data.n})")
    S = X @ X.T + V
    gap = linalg.range_gap(y, S)
    if gap > tol:
        raise InfeasibleError(
            f"y is not in range(X X^T + V): relative gap {gap:.3e} > {tol:.1e}"
        )
    X_pinv = np.linalg.pinv(X)
    M = np.eye(data.n) - X @ X_pinv
    K = X_pinv @ (np.eye(data.n) - V @ M @ linalg.pseudo_inverse(M @ V @ M) @ M)
    theta = K @ y
    resid = y - X @ theta
    V_pinv = linalg.pseudo_inverse(V)
    rank = np.linalg.matrix_rank(X)
    deficient = rank < data.d
    if deficient:
        warnings.warn(
            f"X has column rank {rank} < {data.d}; the BLUE interpretation does not apply",
            RuntimeWarning,
            stacklevel=2,
        )
    diagnostics = {
        "rank_deficient": deficient,
        "gain": K,
        "residual_in_V_gap": _gap_scaled(resid, V, V_pinv, np.linalg.norm(y)),
        "unconstrained_equivalent": unconstrained_equivalent(V, X),
    }
    return EstimateReport(theta, gap, linalg.weighted_sq_norm(resid, V_pinv), None, diagnostics)


def unconstrained_equivalent(V, X, tol: float = linalg.RANGE_TOL) -> bool:
    """Whether dropping the residual range constraint leaves BLUE unchanged.

    This holds iff ``V^+ V X = X``, i.e. every column of ``X`` lies in
    ``range(V)``. Reported as a diagnostic only.
    """
    X = np.asarray(X, dtype=float)
    P = linalg.range_projector(V)
    ref = max(np.linalg.norm(X), 1e-300)
    return bool(np.linalg.norm(P @ X - X) <= tol * ref)


def oracle_mse_weights(theta_true, V_true, alpha: float = 1.0) -> WeightPair:
    """Weights ``(alpha theta theta^T, alpha V)`` attaining the minimum MSE."""
    if not alpha > 0:
        raise InvalidInputError(f"alpha must be positive, got {alpha}")
    t = np.asarray(theta_true, dtype=float).ravel()
    return WeightPair(alpha * np.outer(t, t), alpha * linalg.as_psd(V_true))


def lmmse(C_prior, V_noise, data: Dataset) -> EstimateReport:
    """Linear minimum mean-square error estimate under prior covariance ``C_prior``."""
    return estimate_weighted(WeightPair(C_prior, V_noise), data)


def optimal_gain(C, V, X) -> np.ndarray:
    """Linear map ``K* = C X^T R^+`` with ``theta = K* y``."""
    X = np.asarray(X, dtype=float)
    C = linalg.as_psd(C)
    R = X @ C @ X.T + linalg.as_psd(V)
    return C @ X.T @ linalg.pseudo_inverse(R)


def marginal_mse_of_linear(K, C, V, X) -> float:
    """``tr{(I - K X) C (I - K X)^T + K V K^T}`` for the linear estimator ``K y``."""
    K = np.asarray(K, dtype=float)
    X = np.asarray(X, dtype=float)
    C = np.asarray(C, dtype=float)
    V = np.asarray(V, dtype=float)
    E = np.eye(X.shape[1]) - K @ X
    return max(float(np.trace(E @ C @ E.T) + np.trace(K @ V @ K.T)), 0.0)
