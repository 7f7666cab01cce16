"""The weighted estimator family with fixed weights.

theta(C, V) = C X^T (X C X^T + V)^+ y covers LMMSE (prior and noise
covariances as weights), ridge (C = I, V = lam I), and the BLUE in the
limit of a flat prior. Singular weights restrict theta to range(C) and the
residual to range(V).

    python demos/weights.py
"""

import numpy as np

from tunedreg import Dataset, WeightPair, blue, estimate_weighted, lmmse

rng = np.random.default_rng(1)
n, d = 12, 3
X = rng.standard_normal((n, d))
y = X @ np.array([1.0, 0.0, -2.0]) + 0.3 * rng.standard_normal(n)
data = Dataset(X, y)

lam = 2.0
ridge = estimate_weighted(WeightPair(np.eye(d), lam * np.eye(n)), data).theta
direct = np.linalg.solve(X.T @ X + lam * np.eye(d), X.T @ y)
print("ridge via weights   ", np.round(ridge, 6))
print("ridge normal eqs    ", np.round(direct, 6))

V = np.diag(rng.uniform(0.05, 1.0, n))
print("BLUE                ", np.round(blue(V, data).theta, 6))
# a widening prior approaches the BLUE; much past 1e6 the prior swamps V
# and R's noise directions fall below the rank cutoff
for a in (1e2, 1e4, 1e6):
    print(f"LMMSE, prior {a:.0e}  ", np.round(lmmse(a * np.eye(d), V, data).theta, 6))

# a rank-one prior pins theta to a line
C = np.outer([1.0, 0.0, -1.0], [1.0, 0.0, -1.0])
rep = estimate_weighted(WeightPair(C, 0.1 * np.eye(n)), data)
print("rank-one prior      ", np.round(rep.theta, 6), f"(range gap {rep.diagnostics['theta_range_gap']:.1e})")
