"""Acceptance criteria 1-10, each at its stated tolerance and time budget.

Run as part of the suite or directly (``python tests/test_acceptance.py``);
either way a PASS/FAIL line per criterion is printed at the end.
"""

import json
import time

import numpy as np
import pytest

from oracles import (
    constrained_qp,
    g_grid_2d,
    gls,
    h_diagonal_grid,
    h_scaled_identity_grid,
    random_psd,
)
from tunedreg import Dataset, WeightPair, blue, estimate_weighted, linalg
from tunedreg.covfit import (
    CovStructure,
    G_value,
    attaining_weight,
    cost_J,
    f_value,
    h_value,
    shrinkage_q,
    spice_criterion,
    tuned_criterion,
    tuned_estimate,
)
from tunedreg.exceptions import InfeasibleError, NotAttainedError
from tunedreg.experiments import DEFAULT_CONFIG, run_suite
from tunedreg.solvers import SolverOptions, solve

SI, DG, UN = CovStructure.SCALED_IDENTITY, CovStructure.DIAGONAL, CovStructure.UNSTRUCTURED
PAIRS = [(SI, SI), (DG, SI), (SI, DG), (DG, DG)]


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.1f} s, budget {self.seconds} s"


# ------------------------------------------------------------------ 1


@pytest.mark.criterion(1, "pseudoinverse: Penrose identities on 500 PSD matrices")
def test_c1_penrose_identities():
    rng = np.random.default_rng(101)
    with Budget(10):
        for i in range(500):
            m = int(rng.integers(1, 13))
            A = random_psd(rng, m, rank=int(rng.integers(0, m + 1)), scale=np.exp(rng.uniform(-3, 3)))
            P = linalg.pseudo_inverse(A)
            na, npi = max(np.linalg.norm(A), 1e-300), max(np.linalg.norm(P), 1e-300)
            AP, PA = A @ P, P @ A
            assert np.linalg.norm(A @ P @ A - A) <= 1e-9 * na, i
            assert np.linalg.norm(P @ A @ P - P) <= 1e-9 * npi, i
            assert np.linalg.norm(AP - AP.T) <= 1e-9 * max(np.linalg.norm(AP), 1), i
            assert np.linalg.norm(PA - PA.T) <= 1e-9 * max(np.linalg.norm(PA), 1), i


# ------------------------------------------------------------------ 2


def _weighted_instance(rng):
    n, d = int(rng.integers(1, 13)), int(rng.integers(1, 13))
    X = rng.standard_normal((n, d))
    C = random_psd(rng, d, rank=int(rng.integers(0, d + 1)))
    V = random_psd(rng, n, rank=int(rng.integers(0, n + 1)))
    R = X @ C @ X.T + V
    w, U = np.linalg.eigh(R)
    keep = w > 1e-10 * max(w.max(), 1e-300)
    y = U[:, keep] @ rng.standard_normal(int(keep.sum()))
    return C, V, X, y, U[:, ~keep]


@pytest.mark.criterion(2, "weighted estimate equals the reparameterized constrained oracle")
def test_c2_oracle_equivalence():
    rng = np.random.default_rng(102)
    singular = rejected = 0
    with Budget(30):
        for i in range(200):
            C, V, X, y, null = _weighted_instance(rng)
            data = Dataset(X, y)
            singular += np.linalg.matrix_rank(C) < C.shape[0] or np.linalg.matrix_rank(V) < V.shape[0]
            ref = constrained_qp(C, V, X, y)
            rep = estimate_weighted(WeightPair(C, V), data)
            assert ref is not None
            scale = max(np.linalg.norm(ref), 1e-300)
            assert np.linalg.norm(rep.theta - ref) <= 1e-7 * scale + 1e-12 * np.linalg.norm(y), i
            if null.shape[1]:
                # push y out of range(R): both routes must refuse it
                y_bad = y + null @ rng.standard_normal(null.shape[1]) * (1 + np.linalg.norm(y))
                assert constrained_qp(C, V, X, y_bad) is None
                with pytest.raises(InfeasibleError):
                    estimate_weighted(WeightPair(C, V), Dataset(X, y_bad))
                rejected += 1
    assert singular > 100 and rejected > 50


# ------------------------------------------------------------------ 3


@pytest.mark.criterion(3, "BLUE: GLS form, unbiasedness, variance dominance")
def test_c3_blue():
    rng = np.random.default_rng(103)
    with Budget(30):
        for _ in range(20):
            n = int(rng.integers(3, 12))
            d = int(rng.integers(1, n))
            X = rng.standard_normal((n, d))
            V = random_psd(rng, n) + 0.05 * np.eye(n)
            y = rng.standard_normal(n)
            rep = blue(V, Dataset(X, y))
            ref = gls(V, X, y)
            assert np.linalg.norm(rep.theta - ref) <= 1e-9 * max(np.linalg.norm(ref), 1)
            K = rep.diagnostics["gain"]
            assert np.abs(K @ X - np.eye(d)).max() <= 1e-8
            base = np.trace(K @ V @ K.T)
            P = np.eye(n) - X @ np.linalg.pinv(X)
            for _ in range(100):
                Kc = K + rng.standard_normal((d, n)) @ P
                assert np.abs(Kc @ X - np.eye(d)).max() <= 1e-8
                assert np.trace(Kc @ V @ Kc.T) >= base - 1e-10 * base


# ------------------------------------------------------------------ 4


def _in_family(rng, s, m, x):
    if s is SI:
        return np.exp(rng.uniform(-5, 5)) * np.eye(m)
    if s is DG:
        return np.diag(np.exp(rng.uniform(-5, 5, m)))
    B = rng.standard_normal((m, int(rng.integers(1, m + 1))))
    Q = B @ B.T + np.exp(rng.uniform(-4, 2)) * np.outer(x, x)
    return Q * np.exp(rng.uniform(-3, 3))


@pytest.mark.criterion(4, "closed-form infima h and their attaining weights")
def test_c4_h_closed_forms():
    rng = np.random.default_rng(104)
    with Budget(60):
        for _ in range(10):
            m = int(rng.integers(1, 5))
            x = rng.standard_normal(m)
            W = random_psd(rng, m) + 0.1 * np.eye(m)
            yn = float(np.exp(rng.uniform(-1, 1.5)))
            assert h_value(x, W, SI, yn) == pytest.approx(h_scaled_identity_grid(x, W, yn), rel=1e-6)
            assert h_value(x, W, DG, yn) == pytest.approx(h_diagonal_grid(x, W, yn), rel=1e-6)
        for s in (SI, DG, UN):
            for _ in range(10):
                m = int(rng.integers(1, 6))
                x = rng.standard_normal(m)
                W = random_psd(rng, m) + 0.1 * np.eye(m)
                yn = float(np.exp(rng.uniform(-1, 1.5)))
                h = h_value(x, W, s, yn)
                Q = attaining_weight(x, W, s, yn)
                Qp = np.linalg.pinv(Q, hermitian=True)
                f_att = float(x @ Qp @ x + np.trace(W @ Q) / yn**2)
                assert abs(f_att - h) <= 1e-9 * max(1.0, h)
                for _ in range(200):
                    assert f_value(x, _in_family(rng, s, m, x), W, yn) >= h - 1e-9
        # x outside range(W): the infimum is not attained by any weight
        W = np.diag([1.0, 0.0])
        for s in (DG, UN):
            with pytest.raises(NotAttainedError):
                attaining_weight(np.array([0.0, 1.0]), W, s, 1.0)


# ------------------------------------------------------------------ 5


def _tuning_instance(rng):
    n = int(rng.integers(3, 12))
    d = int(rng.integers(1, 9))
    X = rng.standard_normal((n, d))
    theta = rng.standard_normal(d) * (rng.random(d) < 0.6)
    y = X @ theta + rng.uniform(0.05, 1.0) * rng.standard_normal(n)
    if rng.random() < 0.2:
        y[int(rng.integers(n))] += 20.0
    return Dataset(X, y)


@pytest.mark.criterion(5, "fitted cost equals the normalized SPICE criterion plus two")
def test_c5_cost_identity():
    rng = np.random.default_rng(105)
    with Budget(120):
        for pair in PAIRS:
            for i in range(50):
                data = _tuning_instance(rng)
                rep = tuned_estimate(*pair, data)
                w = WeightPair(rep.C_hat, rep.V_hat)
                J = cost_J(rep.theta, w, data)
                gap = abs(J - spice_criterion(w, data) / float(data.y @ data.y) - 2.0)
                assert gap <= 1e-6 * (1 + abs(J)), (pair, i, gap)


# ------------------------------------------------------------------ 6


@pytest.mark.criterion(6, "tuned criterion minimizer equals the weighted estimate and the G-grid minimizer")
def test_c6_tuned_equivalence():
    rng = np.random.default_rng(106)
    with Budget(120):
        for pair in PAIRS:
            for _ in range(10):
                data = _tuning_instance(rng)
                rep = tuned_estimate(*pair, data)
                ref = estimate_weighted(WeightPair(rep.C_hat, rep.V_hat), data).theta
                assert np.linalg.norm(rep.theta - ref) <= 1e-5 * max(np.linalg.norm(ref), 1e-12) + 1e-12
        for pair in PAIRS:
            X = rng.standard_normal((5, 2))
            y = X @ rng.standard_normal(2) + 0.5 * rng.standard_normal(5)
            data = Dataset(X, y)
            ny, XtX = np.linalg.norm(y), X.T @ X

            # G written out from its h-term decomposition, vectorized over columns
            def G(T):
                R = y[:, None] - X @ T
                if pair[1] is SI:
                    fit = np.sqrt(5) * np.linalg.norm(R, axis=0)
                else:
                    fit = np.abs(R).sum(axis=0)
                if pair[0] is SI:
                    pen = np.sqrt(np.trace(XtX)) * np.linalg.norm(T, axis=0)
                else:
                    pen = np.sqrt(np.diag(XtX)) @ np.abs(T)
                return 2.0 / ny * (fit + pen)

            th_grid, g_min = g_grid_2d(G)
            rep = tuned_estimate(*pair, data)
            assert np.abs(rep.theta - th_grid).max() <= 1e-3, pair
            assert G_value(rep.theta, data, *pair) <= g_min + 1e-9


# ------------------------------------------------------------------ 7


@pytest.mark.criterion(7, "unstructured prior interpolates when it can")
def test_c7_interpolation():
    rng = np.random.default_rng(107)
    with Budget(30):
        for i in range(20):
            n = int(rng.integers(2, 8))
            d = int(rng.integers(n + 1, 12))
            X = rng.standard_normal((n, d))
            y = rng.standard_normal(n)
            for sv in (SI, DG):
                rep = tuned_estimate(UN, sv, Dataset(X, y))
                assert np.linalg.norm(y - X @ rep.theta) <= 1e-8 * np.linalg.norm(y), (i, sv)
        # y in range(X) with full column rank: the LS solution is unique
        for _ in range(5):
            X = rng.standard_normal((8, 3))
            y = X @ rng.standard_normal(3)
            for sv in (SI, DG):
                rep = tuned_estimate(UN, sv, Dataset(X, y))
                ls = np.linalg.lstsq(X, y, rcond=None)[0]
                assert np.linalg.norm(y - X @ rep.theta) <= 1e-8 * np.linalg.norm(y)
                assert np.linalg.norm(rep.theta - ls) <= 1e-8 * np.linalg.norm(ls)


# ------------------------------------------------------------------ 8


@pytest.mark.criterion(8, "shrunken least squares solves the seminorm criterion")
def test_c8_shrinkage():
    rng = np.random.default_rng(108)
    opts = SolverOptions(objective_tol=1e-12)
    with Budget(30):
        for _ in range(50):
            n = int(rng.integers(4, 15))
            d = int(rng.integers(1, n))
            X = rng.standard_normal((n, d))
            y = X @ rng.standard_normal(d) * rng.uniform(0.05, 2) + rng.standard_normal(n)
            data = Dataset(X, y)
            shrunk = (1 - shrinkage_q(data)) * (np.linalg.pinv(X) @ y)
            res = solve(tuned_criterion(UN, SI, data), data, opts)
            assert np.abs(shrunk - res.theta).max() <= 1e-5 * max(1.0, np.linalg.norm(shrunk))
        X = np.vstack([np.eye(2), np.zeros((1, 2))])
        inside, outside = Dataset(X, np.array([1.0, 2.0, 0.0])), Dataset(X, np.array([0.0, 0.0, 3.0]))
        assert shrinkage_q(inside) == 0.0
        assert shrinkage_q(outside) == 1.0
        np.testing.assert_array_equal(tuned_estimate(UN, SI, outside).theta, 0.0)


# ------------------------------------------------------------------ 9


@pytest.fixture(scope="module")
def desk_suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    curves = run_suite(dict(DEFAULT_CONFIG), out)
    elapsed = time.perf_counter() - t0
    print(f"\ndesk-scale suite: {elapsed:.0f} s")
    return {(c.case_id, c.label): c for c in curves}, elapsed, out


def _margin(a, b):
    return (b.tuned_nmse - a.tuned_nmse) / np.hypot(a.tuned_stderr, b.tuned_stderr)


C9 = "desk-scale experiment reproduces the qualitative picture"


@pytest.mark.criterion(9, C9)
def test_c9_runtime_and_completeness(desk_suite):
    curves, elapsed, _ = desk_suite
    assert len(curves) == 12
    assert all(c.trials == 200 and c.failed_trials == 0 for c in curves.values())
    assert elapsed < 600, f"suite took {elapsed:.0f} s"


@pytest.mark.criterion(9, C9)
def test_c9a_oracle_lower_bound(desk_suite):
    bad = [
        (k, float(lam))
        for k, c in desk_suite[0].items()
        for lam, v, se in zip(c.lambdas, c.nmse, c.stderr)
        if v < c.oracle_nmse - 3 * se
    ]
    assert not bad, f"below oracle - 3 se at {bad[:5]}"


@pytest.mark.criterion(9, C9)
def test_c9b_large_lambda_limit(desk_suite):
    bad = {}
    for k, c in desk_suite[0].items():
        i = int(np.flatnonzero(c.lambdas == 10.0)[0])
        if abs(c.nmse[i] - 1.0) > 0.05:
            bad[k] = round(float(c.nmse[i]), 4)
    assert not bad, f"NMSE at lambda = 10 off 1 by > 0.05: {bad}"


@pytest.mark.criterion(9, C9)
def test_c9c_case2_weighted_l1_wins(desk_suite):
    cv = desk_suite[0]
    for wl1 in ("L2-WL1", "L1-WL1"):
        for l2 in ("L2-L2", "L1-L2"):
            m = _margin(cv[2, wl1], cv[2, l2])
            assert m >= 2, f"case 2 {wl1} vs {l2}: margin {m:.2f} pooled se"


@pytest.mark.criterion(9, C9)
def test_c9d_case3_mad_wins(desk_suite):
    cv = desk_suite[0]
    for mad in ("L1-L2", "L1-WL1"):
        for sq in ("L2-L2", "L2-WL1"):
            m = _margin(cv[3, mad], cv[3, sq])
            assert m >= 2, f"case 3 {mad} vs {sq}: margin {m:.2f} pooled se"


@pytest.mark.criterion(9, C9)
def test_c9e_tuned_near_minimum(desk_suite):
    bad = {}
    for (case, lab), c in desk_suite[0].items():
        if case in (1, 2):
            lo = float(c.nmse.min())
            if c.tuned_nmse > 1.25 * lo:
                bad[f"case{case} {lab}"] = f"{c.tuned_nmse:.3f} vs min {lo:.3f}"
    assert not bad, f"tuned NMSE more than 25% above the curve minimum: {bad}"


# ------------------------------------------------------------------ 10


@pytest.mark.criterion(10, "identical seeds give byte-identical CSVs")
def test_c10_determinism(tmp_path):
    cfg = dict(DEFAULT_CONFIG, n=16, d=16, trials=30, lambda_count=12, seed=11)
    run_suite(cfg, tmp_path / "a", workers=1)
    run_suite(cfg, tmp_path / "b", workers=2)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len([n for n in names if n.endswith(".csv")]) == 13
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    other = tmp_path / "c"
    run_suite(dict(cfg, seed=12), other, workers=1)
    assert (other / "summary.csv").read_bytes() != (tmp_path / "a" / "summary.csv").read_bytes()
    assert json.loads((tmp_path / "a" / "summary.json").read_text())["config"]["seed"] == 11


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
