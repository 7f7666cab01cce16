"""Regularized linear regression from covariance fitting.

Estimators of the form ``theta(C, V) = C X^T (X C X^T + V)^+ y`` whose
weight matrices are fitted to the data, and the convex criteria
(square-root LASSO, LAD-LASSO and relatives) they turn out to minimize.
"""

from .covfit import (
    CovStructure,
    G_value,
    TunedReport,
    attaining_weight,
    cost_J,
    criterion_scale,
    f_value,
    h_value,
    shrinkage_q,
    spice_criterion,
    tuned_criterion,
    tuned_estimate,
    tuned_lambda,
)
from .estimators import (
    Dataset,
    EstimateReport,
    WeightPair,
    blue,
    estimate_weighted,
    lmmse,
    marginal_mse_of_linear,
    optimal_gain,
    oracle_mse_weights,
)
from .exceptions import ConvergenceError, InfeasibleError, InvalidInputError, NotAttainedError
from .solvers import (
    Criterion,
    Fit,
    Penalty,
    PenaltyKind,
    SolveResult,
    SolverOptions,
    criterion_value,
    solve,
    solve_batch,
    solve_path,
)

__version__ = "0.1.0"
