"""A small NMSE-versus-lambda curve for the sparse setting.

Runs both square-root-fit estimators over a short lambda grid and prints
the curve next to the data-driven lambda and the oracle lower bound. The
full desk-scale suite is `tunedreg experiment`.

    python demos/nmse_curve.py
"""

import numpy as np

from tunedreg.experiments import ExperimentCase, nmse_curve

spec = ExperimentCase(case_id=2, n=30, d=30, seed=3)
lambdas = np.geomspace(1e-2, 2.0, 9)
curves = [nmse_curve(spec, c, "scaled_identity", lambdas, trials=60) for c in ("scaled_identity", "diagonal")]

print("lambda    " + "".join(f"{c.label:>10}" for c in curves))
for i, lam in enumerate(lambdas):
    print(f"{lam:<10.4f}" + "".join(f"{c.nmse[i]:>10.3f}" for c in curves))
print()
for c in curves:
    print(f"{c.label}: tuned lambda {c.tuned_lambda:.4f} -> NMSE {c.tuned_nmse:.3f} "
          f"(+/- {c.tuned_stderr:.3f}); oracle {c.oracle_nmse:.3f}")
