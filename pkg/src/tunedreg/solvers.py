"""Convex solvers for the regularized regression criteria.

Every criterion has the form

    fit(y - X theta) + lam * penalty(D theta)

where ``fit`` is ``sqrt(MSPE)`` (a scaled l2 norm) or ``MAD`` (a scaled l1
norm), and ``penalty`` is an l2 norm, an l1 norm or an l2 norm after a
linear map (weighted l1 and weighted seminorm penalties fold their weights
into ``D``). Both terms are norms, so the problem is solved by ADMM on the
split ``z = [X theta - y; s D theta]`` with closed-form proximal steps and a
Fenchel dual certificate:

    max  -<u, y>   s.t.  X^T u + D^T w = 0,  u in fit-dual ball,
                         w in lam * penalty-dual ball.

The duality gap is the reported ``certificate_gap``. The solver works on a
batch of right-hand sides that share ``X``; Monte Carlo sweeps rely on this.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .estimators import Dataset
from .exceptions import InvalidInputError


class Fit(enum.Enum):
    SQRT_MSPE = "sqrt_mspe"
    MAD = "mad"


class PenaltyKind(enum.Enum):
    L2 = "l2"
    WEIGHTED_L1 = "weighted_l1"
    SEMINORM = "seminorm"


@dataclass(frozen=True)
class Penalty:
    """Regularization term.

    ``weights`` is the per-coordinate weight vector for ``WEIGHTED_L1`` and the
    PSD matrix ``W`` of ``||theta||_W`` for ``SEMINORM``; unused for ``L2``.
    """

    kind: PenaltyKind
    weights: np.ndarray | None = None

    @classmethod
    def l2(cls) -> "Penalty":
        return cls(PenaltyKind.L2)

    @classmethod
    def weighted_l1(cls, weights) -> "Penalty":
        w = np.asarray(weights, dtype=float).ravel()
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidInputError("l1 weights must be finite and nonnegative")
        return cls(PenaltyKind.WEIGHTED_L1, w)

    @classmethod
    def seminorm(cls, W) -> "Penalty":
        return cls(PenaltyKind.SEMINORM, linalg.as_psd(W))

    def value(self, theta: np.ndarray) -> np.ndarray:
        """Penalty of each column of ``theta`` (d,) or (d, B)."""
        if self.kind is PenaltyKind.L2:
            return np.linalg.norm(theta, axis=0)
        if self.kind is PenaltyKind.WEIGHTED_L1:
            w = self.weights.reshape((-1,) + (1,) * (theta.ndim - 1))
            return np.sum(w * np.abs(theta), axis=0)
        Wt = self.weights @ theta
        return np.sqrt(np.maximum(np.sum(theta * Wt, axis=0), 0.0))


@dataclass(frozen=True)
class Criterion:
    """``fit(theta) + lam * penalty(theta)``."""

    fit: Fit
    penalty: Penalty
    lam: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise InvalidInputError(f"lambda must be finite and >= 0, got {self.lam}")

    @property
    def name(self) -> str:
        f = "L2" if self.fit is Fit.SQRT_MSPE else "L1"
        p = {
            PenaltyKind.L2: "L2",
            PenaltyKind.WEIGHTED_L1: "WL1",
            PenaltyKind.SEMINORM: "WL2",
        }[self.penalty.kind]
        return f"{f}-{p}"

    def with_lambda(self, lam: float) -> "Criterion":
        return Criterion(self.fit, self.penalty, float(lam))


@dataclass
class SolverOptions:
    max_iterations: int = 20000
    objective_tol: float = 1e-9
    rho: float = 1.0
    relaxation: float = 1.6
    check_every: int = 10
    adapt_every: int = 50
    rescue_every: int = 500
    polish_gap: float = 1e-3
    seed: int | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be >= 1")
        if not self.objective_tol > 0:
            raise InvalidInputError("objective_tol must be positive")
        if not (self.rho > 0 and 0 < self.relaxation < 2):
            raise InvalidInputError("rho must be positive and relaxation in (0, 2)")


@dataclass
class SolveResult:
    """Outcome of one solve.

    ``certificate_gap`` is the primal-dual gap measured on the problem with
    ``y`` rescaled to unit root-mean-square, so it is comparable across data
    scales; ``converged`` means it fell below
    ``objective_tol * (1 + |objective_scaled|)``.
    """

    theta: np.ndarray
    objective: float
    iterations: int
    converged: bool
    certificate_gap: float
    dual_value: float = 0.0
    trace: list = field(default_factory=list)


def fit_value(fit: Fit, resid: np.ndarray) -> np.ndarray:
    n = resid.shape[0]
    if fit is Fit.SQRT_MSPE:
        return np.linalg.norm(resid, axis=0) / np.sqrt(n)
    return np.sum(np.abs(resid), axis=0) / n


def criterion_value(c: Criterion, theta, data: Dataset) -> float:
    """Exact value of the criterion at ``theta``."""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != data.d:
        raise InvalidInputError(f"theta has {theta.size} entries, expected {data.d}")
    resid = data.y - data.X @ theta
    val = fit_value(c.fit, resid)
    if c.lam > 0:
        val = val + c.lam * c.penalty.value(theta)
    return float(val)


class _Problem:
    """Matrices shared by every right-hand side of a batch."""

    def __init__(self, c: Criterion, X: np.ndarray):
        n, d = X.shape
        self.n, self.d = n, d
        self.c = c
        D = self._penalty_map(c, d)
        if D is not None and c.lam > 0 and np.linalg.norm(D) > 0:
            self.scale = np.linalg.norm(X, 2) / np.linalg.norm(D, 2) if np.any(X) else 1.0
            A = np.vstack([X, self.scale * D])
            self.D = D
        else:
            self.scale = 1.0
            A = X
            self.D = None
        self.A = A
        self.A_pinv = np.linalg.pinv(A)
        self.blocks = [(slice(0, n), c.fit is Fit.MAD)]
        if self.D is not None:
            self.blocks.append((slice(n, None), c.penalty.kind is PenaltyKind.WEIGHTED_L1))
        # square-root fit with a smooth penalty: the generic structure is solved in closed form
        self.smooth_sqrt = c.fit is Fit.SQRT_MSPE and (
            self.D is None or c.penalty.kind is not PenaltyKind.WEIGHTED_L1
        )
        self.X = X
        if c.fit is Fit.SQRT_MSPE:
            self.fit_radius, self.fit_dual = 1.0 / np.sqrt(n), _l2_col
        else:
            self.fit_radius, self.fit_dual = 1.0 / n, _linf_col
        if self.D is None:
            # w = 0 forces X^T u = 0
            self.G = None
            U, s, _ = np.linalg.svd(X, full_matrices=True)
            r = int(np.sum(s > linalg.RANK_TOL * (s[0] if s.size else 0.0)))
            Uperp = U[:, r:]
            self.dual_proj = Uperp @ Uperp.T
        else:
            Dt_pinv = np.linalg.pinv(self.D.T)
            self.G = Dt_pinv @ X.T
            # X^T u must lie in range(D^T)
            B = X.T - self.D.T @ self.G
            if np.linalg.norm(B) <= 1e-12 * max(np.linalg.norm(X), 1.0):
                self.dual_proj = None
            else:
                self.dual_proj = np.eye(n) - np.linalg.pinv(B) @ B
            self.pen_dual = _linf_col if c.penalty.kind is PenaltyKind.WEIGHTED_L1 else _l2_col

    @staticmethod
    def _penalty_map(c: Criterion, d: int):
        if c.lam == 0:
            return None
        p = c.penalty
        if p.kind is PenaltyKind.L2:
            return np.eye(d)
        if p.kind is PenaltyKind.WEIGHTED_L1:
            if p.weights.size != d:
                raise InvalidInputError(f"expected {d} l1 weights, got {p.weights.size}")
            return np.diag(p.weights)
        if p.weights.shape != (d, d):
            raise InvalidInputError(f"seminorm matrix must be {d}x{d}")
        return spectral_root_t(p.weights)

    def prox(self, v: np.ndarray, rho: np.ndarray) -> np.ndarray:
        n = self.n
        out = np.empty_like(v)
        t1 = (1.0 / np.sqrt(n) if self.c.fit is Fit.SQRT_MSPE else 1.0 / n) / rho
        if self.c.fit is Fit.SQRT_MSPE:
            out[:n] = _prox_l2(v[:n], t1)
        else:
            out[:n] = _prox_l1(v[:n], t1)
        if self.D is not None:
            t2 = (self.c.lam / self.scale) / rho
            if self.c.penalty.kind is PenaltyKind.WEIGHTED_L1:
                out[n:] = _prox_l1(v[n:], t2)
            else:
                out[n:] = _prox_l2(v[n:], t2)
        return out

    def primal(self, theta: np.ndarray, Y: np.ndarray) -> np.ndarray:
        val = fit_value(self.c.fit, Y - self.X @ theta)
        if self.D is not None:
            val = val + self.c.lam * self.c.penalty.value(theta)
        return val

    def dual(self, U: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Dual objective of a feasible point built from multiplier guesses ``U``."""
        if self.dual_proj is not None:
            U = self.dual_proj @ U
        t = np.ones(U.shape[1])
        nu = self.fit_dual(U)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.minimum(t, np.where(nu > 0, self.fit_radius / nu, np.inf))
            if self.G is not None:
                nw = self.pen_dual(self.G @ U)
                t = np.minimum(t, np.where(nw > 0, self.c.lam / nw, np.inf))
        t = np.where(np.isfinite(t), t, 0.0)
        return t * np.abs(np.sum(U * Y, axis=0))


def spectral_root_t(W) -> np.ndarray:
    """Matrix ``D`` with ``D^T D = W`` and full row rank."""
    return spectral_factor_sqrt(W).T


def spectral_factor_sqrt(W) -> np.ndarray:
    return linalg.spectral_factor(W).sqrt()


def _l2_col(M):
    return np.linalg.norm(M, axis=0)


def _linf_col(M):
    return np.max(np.abs(M), axis=0) if M.shape[0] else np.zeros(M.shape[1])


def _prox_l2(v, t):
    nv = np.linalg.norm(v, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(nv > t, 1.0 - t / nv, 0.0)
    return v * shrink


def _prox_l1(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def solve_batch(c: Criterion, X, Y, opts: SolverOptions | None = None) -> list[SolveResult]:
    """Minimize the criterion for every column of ``Y`` with a shared ``X``.

    Columns are iterated together; each column keeps its own step size and
    stops as soon as its own duality gap meets the tolerance, so the result
    for a column does not depend on the rest of the batch.
    """
    opts = opts or SolverOptions()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, d = X.shape
    if Y.shape[0] != n:
        raise InvalidInputError(f"Y has {Y.shape[0]} rows, X has {n}")
    B = Y.shape[1]
    prob = _Problem(c, X)

    # every criterion is 1-homogeneous in (y, theta); solve at unit RMS
    scales = np.linalg.norm(Y, axis=0) / np.sqrt(n)
    results: list[SolveResult | None] = [None] * B
    for j in np.flatnonzero(scales == 0):
        results[j] = SolveResult(np.zeros(d), 0.0, 0, True, 0.0)
    idx = np.flatnonzero(scales > 0)
    if idx.size:
        _admm(prob, Y[:, idx] / scales[idx], idx, scales[idx], opts, results)
    return results


def solve_path(c: Criterion, X, Y, lambdas, opts: SolverOptions | None = None) -> list[list[SolveResult]]:
    """Solve ``c`` for every lambda in ``lambdas`` and every column of ``Y``.

    Positive lambdas are visited in decreasing order, each warm-started from
    the previous one (the split matrix does not depend on lambda). The
    output is indexed like ``lambdas``; ``out[i][j]`` is column ``j`` at
    ``lambdas[i]``.
    """
    opts = opts or SolverOptions()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, d = X.shape
    lambdas = np.asarray(lambdas, dtype=float)
    out: list = [None] * lambdas.size
    scales = np.linalg.norm(Y, axis=0) / np.sqrt(n)
    idx = np.flatnonzero(scales > 0)
    Ys = Y[:, idx] / scales[idx] if idx.size else None
    state = None
    for i in sorted(range(lambdas.size), key=lambda i: -lambdas[i]):
        ci = c.with_lambda(lambdas[i])
        if lambdas[i] == 0 or not idx.size:
            out[i] = solve_batch(ci, X, Y, opts)
            continue
        prob = _Problem(ci, X)
        if prob.D is None:
            out[i] = solve_batch(ci, X, Y, opts)
            continue
        results: list = [None] * Y.shape[1]
        for j in np.flatnonzero(scales == 0):
            results[j] = SolveResult(np.zeros(d), 0.0, 0, True, 0.0)
        state = _admm(prob, Ys, idx, scales[idx], opts, results, state)
        out[i] = results
    return out


def _polish(prob: _Problem, theta: np.ndarray, z: np.ndarray, y: np.ndarray, max_pivots: int | None = None):
    """Refine ``theta`` on the active structure read off the prox output ``z``.

    The zeros of ``z`` fix which residuals / coefficients vanish and the signs
    fix the linear pieces of the l1 terms; what is left is a smooth problem
    on an affine set, solved by damped Newton. Directions in which that
    problem is linear (degenerate LP vertices) are followed to the next
    breakpoint and the structure is updated, as in a simplex pivot.
    Returns ``(theta, U)`` with a matching fit multiplier ``U`` for the dual
    certificate, or ``None``.
    """
    n, d = prob.n, prob.d
    X, D, lam = prob.X, prob.D, prob.c.lam
    mad = prob.c.fit is Fit.MAD
    l1_pen = D is not None and prob.c.penalty.kind is PenaltyKind.WEIGHTED_L1
    dg = np.diag(D) if l1_pen else None

    def obj(th):
        return float(prob.primal(th[:, None], y[:, None])[0])

    def multipliers(theta, act_fit, s_fit, act_pen, s_pen, factor=None):
        """Fit and penalty multipliers: known pieces from the structure, the rest by least squares.

        ``factor`` is an optional thin SVD ``(U, s, Vt)`` of the active rows, whose
        transpose is the least-squares matrix here.
        """
        res = X @ theta - y
        u = np.zeros(n)
        if mad:
            u[~act_fit] = s_fit[~act_fit] / n
        elif not act_fit[0]:
            nr = np.linalg.norm(res)
            if nr == 0:
                return None
            u = res / (nr * np.sqrt(n))
        rhs = -X.T @ u
        blocks = [X[act_fit].T]
        w = np.zeros(0)
        if D is not None:
            if l1_pen:
                w_known = np.where(act_pen, 0.0, lam * s_pen)
            elif not act_pen[0]:
                Dt = D @ theta
                nd = np.linalg.norm(Dt)
                if nd == 0:
                    return None
                w_known = lam * Dt / nd
            else:
                w_known = np.zeros(D.shape[0])
            rhs = rhs - D.T @ w_known
            blocks.append(D[act_pen].T)
            w = w_known.copy()
        M = np.hstack(blocks)
        if M.shape[1]:
            if factor is not None and len(factor) == 4:
                # eliminated form: active penalty rows are scaled unit vectors
                Ef, Vf, wf, free = factor
                ua = Ef @ (Vf @ ((Vf.T @ rhs[free]) / wf))
                u[act_fit] = ua
                fixed = ~free
                w[fixed] = (rhs[fixed] - X[act_fit][:, fixed].T @ ua) / dg[fixed]
                return u, w
            if factor is not None:
                Ef, Vf, wf = factor
                sol = Ef @ (Vf @ ((Vf.T @ rhs) / wf))
            else:
                sol = np.linalg.lstsq(M, rhs, rcond=1e-12)[0]
            k = int(act_fit.sum())
            u[act_fit] = sol[:k]
            if D is not None:
                w[act_pen] = sol[k:]
        return u, w

    if max_pivots is None:
        max_pivots = 2 * (n + d)
    for _ in range(max_pivots):
        z1 = z[:n]
        eq_rows, eq_rhs = [], []
        s_fit = s_pen = None
        act_pen = np.zeros(0, dtype=bool)
        if mad:
            act_fit = z1 == 0.0
            s_fit = np.sign(z1)
            eq_rows.append(X[act_fit])
            eq_rhs.append(y[act_fit])
        else:
            act_fit = np.full(n, not np.any(z1))
            if act_fit[0]:
                eq_rows.append(X)
                eq_rhs.append(y)
        if D is not None:
            z2 = z[n:]
            if l1_pen:
                act_pen = z2 == 0.0
                s_pen = np.sign(z2)
            else:
                act_pen = np.full(D.shape[0], not np.any(z2))
            eq_rows.append(D[act_pen])
            eq_rhs.append(np.zeros(int(act_pen.sum())))
        E = np.vstack(eq_rows) if eq_rows else np.zeros((0, d))
        e = np.concatenate(eq_rhs) if eq_rhs else np.zeros(0)

        factor = None
        general = not l1_pen
        if l1_pen:
            # active penalty rows only pin coordinates to zero: eliminate them
            free = ~act_pen | (dg == 0)
            theta = np.where(free, theta, 0.0)
            Ef = X[act_fit][:, free]
            ef = y[act_fit]
            N = np.zeros((d, 0))
            if Ef.shape[0] and Ef.shape[1]:
                w_g, V_g = np.linalg.eigh(Ef.T @ Ef)
                keep = w_g > 1e-12 * max(w_g[-1], 1e-300)
                tf = theta[free]
                tf = tf - V_g[:, keep] @ ((V_g[:, keep].T @ (Ef.T @ (Ef @ tf - ef))) / w_g[keep])
                if np.linalg.norm(Ef @ tf - ef) <= 1e-9 * (1.0 + np.linalg.norm(ef) + np.linalg.norm(tf)):
                    theta[free] = tf
                    factor = (Ef, V_g[:, keep], w_g[keep], free)
                    N = np.zeros((d, int((~keep).sum())))
                    N[free] = V_g[:, ~keep]
                else:
                    general = True
            elif Ef.shape[1]:
                N = np.eye(d)[:, free]
                factor = (Ef, np.zeros((Ef.shape[1], 0)), np.zeros(0), free)
            elif np.linalg.norm(ef) > 1e-9 * (1.0 + np.linalg.norm(ef)):
                return None
            else:
                factor = (Ef, np.zeros((0, 0)), np.zeros(0), free)
        if general and E.shape[0]:
            # Gram eigendecomposition first (cheap); SVD if it is not accurate enough
            w_g, V_g = np.linalg.eigh(E.T @ E)
            keep = w_g > 1e-12 * max(w_g[-1], 1e-300)
            cand = theta - V_g[:, keep] @ ((V_g[:, keep].T @ (E.T @ (E @ theta - e))) / w_g[keep])
            tol_e = 1e-9 * (1.0 + np.linalg.norm(e) + np.linalg.norm(cand))
            if np.linalg.norm(E @ cand - e) <= tol_e:
                theta = cand
                factor = (E, V_g[:, keep], w_g[keep])
                N = V_g[:, ~keep]
            else:
                _, s_e, Vt_e = np.linalg.svd(E, full_matrices=True)
                r = int(np.sum(s_e > 1e-10 * s_e[0])) if s_e.size and s_e[0] > 0 else 0
                theta = theta - np.linalg.lstsq(E, E @ theta - e, rcond=1e-10)[0]
                if np.linalg.norm(E @ theta - e) > 1e-9 * (1.0 + np.linalg.norm(e) + np.linalg.norm(theta)):
                    return None  # active pieces cannot vanish together
                N = Vt_e[r:].T
        elif general:
            N = np.eye(d)
        # keep the linear pieces consistent with where theta actually is
        if mad:
            rs = np.sign(X @ theta - y)
            s_fit = np.where(~act_fit & (rs != 0), rs, s_fit)
        if l1_pen:
            ts = np.sign(theta)
            s_pen = np.where(~act_pen & (ts != 0), ts, s_pen)

        def grad_hess(th):
            g = np.zeros(d)
            H = np.zeros((d, d))
            if mad:
                g += X[~act_fit].T @ s_fit[~act_fit] / n
            elif not act_fit[0]:
                res = X @ th - y
                nr = np.linalg.norm(res)
                if nr > 0:
                    g += X.T @ res / (nr * np.sqrt(n))
                    P = np.eye(n) - np.outer(res, res) / nr**2
                    H += X.T @ P @ X / (nr * np.sqrt(n))
            if D is not None:
                if l1_pen:
                    g += lam * D[~act_pen].T @ s_pen[~act_pen]
                elif not act_pen[0]:
                    Dt = D @ th
                    nd = np.linalg.norm(Dt)
                    if nd > 0:
                        g += lam * D.T @ Dt / nd
                        P = np.eye(D.shape[0]) - np.outer(Dt, Dt) / nd**2
                        H += lam * D.T @ P @ D / nd
            return g, H

        def first_hit(th, direc):
            """Smallest step along ``direc`` at which an inactive l1 piece reaches zero."""
            t_hit, where = np.inf, None
            if mad:
                res = X @ th - y
                dr = X @ direc
                with np.errstate(divide="ignore", invalid="ignore"):
                    tt = np.where(~act_fit & (res * dr < 0), -res / dr, np.inf)
                i = int(np.argmin(tt))
                if tt[i] < t_hit:
                    t_hit, where = tt[i], ("fit", i)
            if l1_pen:
                with np.errstate(divide="ignore", invalid="ignore"):
                    tt = np.where(~act_pen & (th * direc < 0), -th / direc, np.inf)
                i = int(np.argmin(tt))
                if tt[i] < t_hit:
                    t_hit, where = tt[i], ("pen", i)
            return t_hit, where

        ray = None
        zero_at = None
        if N.shape[1]:
            f = obj(theta)
            for _ in range(30):
                g, H = grad_hess(theta)
                gN = N.T @ g
                if np.linalg.norm(gN) <= 1e-13 * (1.0 + np.linalg.norm(g)):
                    break
                HN = N.T @ H @ N
                w_h, Q_h = np.linalg.eigh(HN)
                flat = w_h <= 1e-10 * max(w_h.max(initial=0.0), 1.0)
                g_flat = Q_h[:, flat] @ (Q_h[:, flat].T @ gN)
                if np.linalg.norm(g_flat) > 1e-10 * (1.0 + np.linalg.norm(g)):
                    ray = -N @ g_flat
                    break
                inv = np.where(flat, 0.0, 1.0 / np.where(flat, 1.0, w_h))
                step = -N @ (Q_h @ (inv * (Q_h.T @ gN)))
                # the signs are only valid up to the first breakpoint
                t_cap, where = first_hit(theta, step)
                t = min(1.0, t_cap)
                while t > 1e-4 * min(1.0, t_cap):
                    cand = theta + t * step
                    fc = obj(cand)
                    if fc <= f:
                        break
                    t *= 0.5
                else:
                    break
                theta, f_old, f = cand, f, fc
                if t == t_cap:
                    zero_at = where
                    break
                if f_old - f <= 1e-16 * (1.0 + abs(f)):
                    break
        if ray is not None:
            # follow the linear direction to the first piece that hits zero
            t_hit, zero_at = first_hit(theta, ray)
            if zero_at is not None:
                theta = theta + t_hit * ray
        if zero_at is None:
            mult = multipliers(theta, act_fit, s_fit, act_pen, s_pen, factor)
            if mult is None:
                return None
            u, w = mult
            # release the active l1 piece whose multiplier leaves its interval the most
            best, release = 1e-9, None
            if mad:
                viol = np.where(act_fit, np.abs(u) * n - 1.0, -np.inf)
                i = int(np.argmax(viol))
                if viol[i] > best:
                    best, release = viol[i], (i, np.sign(u[i]))
            if l1_pen and lam > 0:
                viol = np.where(act_pen, np.abs(w) / lam - 1.0, -np.inf)
                i = int(np.argmax(viol))
                if viol[i] > best:
                    best, release = viol[i], (n + i, np.sign(w[i]))
            if release is None:
                return theta, u
        z = prob.A @ theta
        z[:n] -= y
        if mad:
            z[:n][act_fit] = 0.0
        if D is not None:
            if l1_pen:
                z[n:][act_pen] = 0.0
            elif act_pen[0]:
                z[n:] = 0.0
        if not mad and act_fit[0]:
            z[:n] = 0.0
        if zero_at is not None:
            z[zero_at[1] if zero_at[0] == "fit" else n + zero_at[1]] = 0.0
        else:
            z[release[0]] = release[1]

    mult = multipliers(theta, act_fit, s_fit, act_pen, s_pen)
    if mult is None:
        return None
    return theta, mult[0]


def _polish_sqrt(prob: _Problem, z: np.ndarray, y: np.ndarray):
    """Square-root fit with a nonzero residual on a fixed penalty structure.

    Stationarity reads ``X^T (X theta - y) + m * g = 0`` with
    ``m = sqrt(n) ||y - X theta||`` and ``g`` a penalty subgradient, so the
    problem collapses to one scalar: a quadratic for the l1 penalty and a
    root along the generalized ridge path for the l2 / seminorm penalties.
    """
    n, d = prob.n, prob.d
    X, D, lam = prob.X, prob.D, prob.c.lam
    if D is None:
        theta = np.linalg.lstsq(X, y, rcond=1e-12)[0]
    elif prob.c.penalty.kind is PenaltyKind.WEIGHTED_L1:
        z2 = z[n:]
        S = z2 != 0.0
        theta = np.zeros(d)
        if np.any(S):
            XS = X[:, S]
            G = np.linalg.pinv(XS.T @ XS, rcond=1e-12, hermitian=True)
            a = G @ (XS.T @ y)
            bvec = G @ (lam * np.diag(D)[S] * np.sign(z2[S]))
            r0 = y - XS @ a
            c = XS @ bvec
            # m^2 = n ||r0 + m c||^2
            qa = 1.0 - n * (c @ c)
            qb = -2.0 * n * (r0 @ c)
            qc = -n * (r0 @ r0)
            if abs(qa) < 1e-14:
                if qb == 0:
                    return None
                roots = np.array([-qc / qb])
            else:
                disc = qb * qb - 4 * qa * qc
                if disc < 0:
                    return None
                sq = np.sqrt(disc)
                roots = np.array([(-qb + sq) / (2 * qa), (-qb - sq) / (2 * qa)])
            roots = roots[roots > 0]
            if not roots.size:
                return None
            m = roots.min()
            theta[S] = a - m * bvec
    else:
        if not np.any(z[n:]):
            # D theta = 0: least squares on null(D)
            _, s, Vt = np.linalg.svd(D)
            r = int(np.sum(s > 1e-10 * s[0])) if s.size else 0
            N = Vt[r:].T
            theta = N @ np.linalg.lstsq(X @ N, y, rcond=1e-12)[0] if N.shape[1] else np.zeros(d)
        else:
            theta = _ridge_root(prob, y)
            if theta is None:
                return None
    res = X @ theta - y
    nr = np.linalg.norm(res)
    if nr == 0:
        return None
    u = res / (nr * np.sqrt(n))
    return theta, u


def _sqrt_l1_walk(prob: _Problem, theta: np.ndarray, z: np.ndarray, y: np.ndarray, max_pivots: int | None = None):
    """Active-set walk for the square-root fit with a weighted l1 penalty.

    On a fixed support and sign pattern the minimizer has the closed form of
    :func:`_polish_sqrt`. If it breaks a sign, move toward it only up to the
    first coefficient that reaches zero and drop it; otherwise add the
    inactive coefficient whose optimality condition is violated the most.
    Assumes a nonzero residual along the way; returns ``None`` otherwise.
    """
    n, d = prob.n, prob.d
    X, lam = prob.X, prob.c.lam
    wts = np.diag(prob.D)
    sgn = np.sign(z[n:]).astype(float)
    theta = np.where(sgn != 0, theta, 0.0)
    theta = np.where(np.sign(theta) == sgn, theta, 0.0)
    if max_pivots is None:
        max_pivots = 2 * (n + d)
    for _ in range(max_pivots):
        zz = np.zeros_like(z)
        zz[n:] = sgn
        out = _polish_sqrt(prob, zz, y)
        if out is None:
            return None
        target = out[0]
        S = sgn != 0
        bad = S & (np.sign(target) != sgn)
        if np.any(bad):
            step = target - theta
            with np.errstate(divide="ignore", invalid="ignore"):
                tt = np.where(bad & (theta * step < 0), -theta / step, np.inf)
            i = int(np.argmin(tt))
            t = min(max(tt[i], 0.0), 1.0) if np.isfinite(tt[i]) else 0.0
            theta = theta + t * step
            theta[i] = 0.0
            sgn[i] = 0.0
            theta[sgn == 0] = 0.0
            continue
        theta = target
        res = X @ theta - y
        nr = np.linalg.norm(res)
        if nr == 0:
            return None
        grad = X.T @ res / (nr * np.sqrt(n))
        if lam > 0:
            with np.errstate(divide="ignore", invalid="ignore"):
                viol = np.where(S, -np.inf, np.abs(grad) / (lam * wts) - 1.0)
        else:
            viol = np.where(S, -np.inf, np.where(np.abs(grad) > 0, np.inf, -np.inf))
        i = int(np.argmax(viol))
        if not viol[i] > 1e-9:
            return theta, res / (nr * np.sqrt(n))
        sgn[i] = -np.sign(grad[i])
    return None


def _ridge_path(prob: _Problem):
    """Cached map ``(nu, X^T y) -> (X^T X + nu D^T D)^+ X^T y``.

    Uses a simultaneous diagonalization when ``D^T D`` is nonsingular and
    falls back to a dense solve per evaluation otherwise.
    """
    cached = getattr(prob, "_ridge", None)
    if cached is not None:
        return cached
    from scipy.linalg import eigh

    XtX, DtD = prob.X.T @ prob.X, prob.D.T @ prob.D
    ev = np.linalg.eigvalsh(DtD)
    if ev[0] > 1e-10 * ev[-1]:
        w, Q = eigh(XtX, DtD)
        w = np.maximum(w, 0.0)

        def theta_of(nu, Xty):
            return Q @ ((Q.T @ Xty) / (w + nu))
    else:

        def theta_of(nu, Xty):
            return np.linalg.lstsq(XtX + nu * DtD, Xty, rcond=1e-14)[0]

    scale = max(np.trace(XtX), 1e-300) / max(np.trace(DtD), 1e-300)
    prob._ridge = (theta_of, scale)
    return prob._ridge


def _ridge_root(prob: _Problem, y):
    """Point of the generalized ridge path satisfying the square-root optimality condition.

    Stationarity of ``||r|| / sqrt(n) + lam ||D theta||`` with both terms
    nonzero gives ``theta = theta_ridge(nu)`` with
    ``nu ||D theta|| = lam sqrt(n) ||r||``; the left side minus the right is
    increasing in ``nu``.
    """
    from scipy.optimize import brentq

    X, D, lam, n = prob.X, prob.D, prob.c.lam, prob.n
    theta_of, scale = _ridge_path(prob)
    Xty = X.T @ y

    def phi(lognu):
        nu = scale * np.exp(lognu)
        th = theta_of(nu, Xty)
        return nu * np.linalg.norm(D @ th) - lam * np.sqrt(n) * np.linalg.norm(y - X @ th)

    # near nu = 0 theta approaches an interpolant and phi is rounding noise of
    # either sign, so bracket the first sign change coming down from above
    hi = 40.0
    if not phi(hi) > 0:
        return None
    for lo in np.arange(hi - 2.0, -40.5, -2.0):
        if phi(lo) < 0:
            break
        hi = lo
    else:
        return None
    lognu = brentq(phi, lo, hi, xtol=1e-13, rtol=1e-15, maxiter=200)
    return theta_of(scale * np.exp(lognu), Xty)


def _thresholded(prob: _Problem, theta: np.ndarray, y: np.ndarray, tau: float) -> np.ndarray:
    """Pseudo prox output with near-zero pieces of ``[X theta - y; s D theta]`` zeroed."""
    n = prob.n
    z = prob.A @ theta
    z[:n] -= y
    for sl, is_l1 in prob.blocks:
        if is_l1:
            z[sl][np.abs(z[sl]) <= tau] = 0.0
        elif np.linalg.norm(z[sl]) <= tau * np.sqrt(n):
            z[sl] = 0.0
    return z


def _try_polish(prob, j, z_j, y_j, best_p, best_d, best_theta) -> None:
    n = prob.n
    candidates = []
    if prob.smooth_sqrt and prob.D is not None:
        # only three structures exist: generic, D theta = 0 and r = 0
        z_gen = np.ones_like(z_j)
        z_null = np.ones_like(z_j)
        z_null[n:] = 0.0
        first = z_gen if np.any(z_j[n:]) else z_null
        second = z_null if first is z_gen else z_gen
        z_int = np.ones_like(z_j)
        z_int[:n] = 0.0
        candidates.append(lambda: _polish_sqrt(prob, first, y_j))
        candidates.append(lambda: _polish(prob, best_theta[:, j].copy(), z_int, y_j))
        candidates.append(lambda: _polish_sqrt(prob, second, y_j))
    elif prob.c.fit is Fit.SQRT_MSPE:
        # the kink at zero residual is tried from both sides
        z_int = z_j.copy()
        z_int[:n] = 0.0
        if prob.blocks[1][1]:

            def walk():
                start = best_theta[:, j].copy()
                out = _sqrt_l1_walk(prob, start, z_j, y_j)
                # a support with no closed-form stationary point: general walk
                return out if out is not None else _polish(prob, start, z_j, y_j)

            candidates.append(walk)
        else:
            candidates.append(lambda: _polish_sqrt(prob, z_j, y_j))
        candidates.append(lambda: _polish(prob, best_theta[:, j].copy(), z_int, y_j))
        if not np.any(z_j[:n]):
            candidates.reverse()
    else:
        candidates.append(lambda: _polish(prob, best_theta[:, j].copy(), z_j, y_j))
    for make in candidates:
        out = make()
        if out is None:
            continue
        th, uj = out
        pj = prob.primal(th[:, None], y_j[:, None])[0]
        if pj < best_p[j]:
            best_p[j] = pj
            best_theta[:, j] = th
        best_d[j] = max(best_d[j], prob.dual(uj[:, None], y_j[:, None])[0])
        if best_p[j] - best_d[j] <= 1e-12 * (1.0 + abs(best_p[j])):
            return


def _signature(prob: _Problem, z: np.ndarray) -> bytes:
    """Active structure of a prox output: entry signs of l1 blocks, zero or not for l2 blocks."""
    n = prob.n
    parts = []
    for sl, is_l1 in prob.blocks:
        zb = z[sl]
        parts.append(np.sign(zb) if is_l1 else np.array([float(np.any(zb))]))
    return np.concatenate(parts).astype(np.int8).tobytes()


def _admm(prob: _Problem, Ys, idx, scales, opts: SolverOptions, results, state=None) -> dict:
    """Run the batched iteration; returns the final ``z, u, rho`` per column.

    ``state`` (same layout) warm-starts the iteration, e.g. from the
    neighbouring value of lambda on a path.
    """
    n, d = prob.n, prob.d
    m = prob.A.shape[0]
    k = Ys.shape[1]
    b = np.zeros((m, k))
    b[:n] = Ys
    if state is None:
        theta = prob.A_pinv[:, :n] @ Ys
        rho = np.full(k, opts.rho)
        z = prob.prox(prob.A @ theta - b, rho)
        u = np.zeros((m, k))
    else:
        z, u, rho = state["z"].copy(), state["u"].copy(), state["rho"].copy()
    final = {"z": np.zeros((m, k)), "u": np.zeros((m, k)), "rho": np.zeros(k), "theta": np.zeros((d, k))}
    best_p = np.full(k, np.inf)
    best_d = np.zeros(k)
    best_theta = np.zeros((d, k))
    traces = [[] for _ in range(k)]
    prev_sig = [None] * k
    tried_sig = [None] * k
    if state is not None and "theta" in state:
        # path following: the neighbouring solution's structure is usually one pivot away
        best_theta[:] = state["theta"]
        best_p = prob.primal(best_theta, Ys)
        for j in range(k):
            zt = _thresholded(prob, best_theta[:, j], Ys[:, j], 1e-10)
            _try_polish(prob, j, zt, Ys[:, j], best_p, best_d, best_theta)
    alive = np.arange(k)
    alpha = opts.relaxation

    it = 0
    while alive.size:
        it += 1
        theta = prob.A_pinv @ (z + b - u)
        Ax = prob.A @ theta - b
        h = alpha * Ax + (1.0 - alpha) * z
        z_old = z
        z = prob.prox(h + u, rho)
        u = u + h - z

        last = it >= opts.max_iterations
        if it % opts.check_every == 0 or last:
            p = prob.primal(theta, b[:n])
            better = p < best_p
            best_p = np.where(better, p, best_p)
            best_theta[:, better] = theta[:, better]
            best_d = np.maximum(best_d, prob.dual(rho * u[:n], b[:n]))
            tol = opts.objective_tol * (1.0 + np.abs(best_p))
            for j in range(alive.size):
                if best_p[j] - best_d[j] <= tol[j]:
                    continue
                sig = _signature(prob, z[:, j])
                near = best_p[j] - best_d[j] <= opts.polish_gap * (1.0 + best_p[j])
                first = prob.smooth_sqrt and tried_sig[j] is None
                if first or (near and sig == prev_sig[j] and sig != tried_sig[j]):
                    tried_sig[j] = sig
                    _try_polish(prob, j, z[:, j], b[:n, j], best_p, best_d, best_theta)
                if it % opts.rescue_every == 0:
                    for tau in (1e-9, 1e-7, 1e-5, 1e-3):
                        if best_p[j] - best_d[j] <= tol[j]:
                            break
                        zt = _thresholded(prob, best_theta[:, j], b[:n, j], tau)
                        _try_polish(prob, j, zt, b[:n, j], best_p, best_d, best_theta)
                prev_sig[j] = sig
            gap = np.maximum(best_p - best_d, 0.0)
            tol = opts.objective_tol * (1.0 + np.abs(best_p))
            for j in range(alive.size):
                traces[j].append((it, float(best_p[j]), float(gap[j])))
            ok = gap <= tol
            done = ok | last
            if np.any(done):
                for j in np.flatnonzero(done):
                    jj = alive[j]
                    s = scales[jj]
                    final["z"][:, jj] = z[:, j]
                    final["u"][:, jj] = u[:, j]
                    final["rho"][jj] = rho[j]
                    final["theta"][:, jj] = best_theta[:, j]
                    results[idx[jj]] = SolveResult(
                        theta=best_theta[:, j] * s,
                        objective=float(best_p[j] * s),
                        iterations=it,
                        converged=bool(ok[j]),
                        certificate_gap=float(gap[j]),
                        dual_value=float(best_d[j] * s),
                        trace=traces[j],
                    )
                keep = ~done
                alive = alive[keep]
                z, u, b, rho = z[:, keep], u[:, keep], b[:, keep], rho[keep]
                best_p, best_d = best_p[keep], best_d[keep]
                best_theta = best_theta[:, keep]
                Ax, z_old = Ax[:, keep], z_old[:, keep]
                keep_list = np.flatnonzero(keep)
                traces = [traces[j] for j in keep_list]
                prev_sig = [prev_sig[j] for j in keep_list]
                tried_sig = [tried_sig[j] for j in keep_list]
                if not alive.size:
                    break

        if it % opts.adapt_every == 0:
            r_norm = np.linalg.norm(Ax - z, axis=0)
            s_norm = rho * np.linalg.norm(prob.A.T @ (z - z_old), axis=0)
            factor = np.where(r_norm > 10.0 * s_norm, 2.0, np.where(s_norm > 10.0 * r_norm, 0.5, 1.0))
            rho = rho * factor
            u = u / factor
    return final


def solve(c: Criterion, data: Dataset, opts: SolverOptions | None = None) -> SolveResult:
    """Global minimizer of a criterion for one data set.

    Non-convergence within ``opts.max_iterations`` is reported through
    ``converged=False`` rather than raised.

    Examples
    --------
    >>> data = Dataset(np.ones((3, 1)), np.array([0.0, 1.0, 10.0]))
    >>> round(float(lad(data).theta[0]), 6)
    1.0
    """
    res = solve_batch(c, data.X, data.y, opts)[0]
    res.objective = criterion_value(c, res.theta, data)
    return res


def least_squares(data: Dataset, opts: SolverOptions | None = None) -> SolveResult:
    return solve(Criterion(Fit.SQRT_MSPE, Penalty.l2(), 0.0), data, opts)


def lad(data: Dataset, opts: SolverOptions | None = None) -> SolveResult:
    """Least absolute deviation fit (MAD criterion with no penalty)."""
    return solve(Criterion(Fit.MAD, Penalty.l2(), 0.0), data, opts)
