"""Monte Carlo comparison of the tuned estimators on three synthetic settings.

Each setting fixes a Gaussian design ``X`` and draws ``theta ~ N(0, C0)``,
``eps ~ N(0, V0)`` per trial:

1. ``C0 = I``, ``V0 = v I``;
2. ``C0`` diagonal with a few unit entries, ``V0 = v I``;
3. as 2, with a few entries of ``V0`` replaced by a large outlier variance.

``v`` is set from the signal-to-noise ratio ``tr(X C0 X^T) / tr(V0)``
before any outliers are inserted. Each estimator is scored by
``NMSE(lam) = E ||theta - theta_hat_lam||^2 / tr(C0)`` over a lambda grid,
at its tuned lambda, and against the LMMSE lower bound.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _io, linalg
from .covfit import CovStructure, tuned_criterion
from .estimators import Dataset
from .exceptions import ConvergenceError, InvalidInputError
from .solvers import SolverOptions, solve_path

MAX_FAILED_FRACTION = 0.01
THREADS_ENV = "TUNEDREG_NUM_THREADS"

TABLE1_PAIRS = (
    (CovStructure.SCALED_IDENTITY, CovStructure.SCALED_IDENTITY),
    (CovStructure.DIAGONAL, CovStructure.SCALED_IDENTITY),
    (CovStructure.SCALED_IDENTITY, CovStructure.DIAGONAL),
    (CovStructure.DIAGONAL, CovStructure.DIAGONAL),
)


def default_lambdas() -> np.ndarray:
    """0 followed by 60 log-spaced points on [1e-3, 2]."""
    return np.concatenate([[0.0], np.geomspace(1e-3, 2.0, 60)])


@dataclass(frozen=True)
class ExperimentCase:
    case_id: int
    n: int = 40
    d: int = 40
    snr: float = 10.0
    sparsity: int | None = None
    outlier_count: int = 2
    outlier_variance: float = 500.0
    seed: int = 0

    def __post_init__(self):
        if self.case_id not in (1, 2, 3):
            raise InvalidInputError(f"case_id must be 1, 2 or 3, got {self.case_id}")
        if self.n < 1 or self.d < 1:
            raise InvalidInputError("n and d must be positive")
        if not self.snr > 0:
            raise InvalidInputError("snr must be positive")
        if self.sparsity is None:
            object.__setattr__(self, "sparsity", max(1, self.d // 10))
        if not 1 <= self.sparsity <= self.d:
            raise InvalidInputError(f"sparsity must be in [1, d], got {self.sparsity}")
        if not 0 <= self.outlier_count <= self.n:
            raise InvalidInputError(f"outlier_count must be in [0, n], got {self.outlier_count}")
        if not self.outlier_variance > 0:
            raise InvalidInputError("outlier_variance must be positive")


def _case_rng(spec: ExperimentCase) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, spec.case_id, 0]))


def trial_rng(spec: ExperimentCase, trial: int) -> np.random.Generator:
    """Independent stream for one trial; does not depend on how trials are scheduled."""
    return np.random.default_rng(np.random.SeedSequence([spec.seed, spec.case_id, 1, trial]))


def generate_case(spec: ExperimentCase):
    """Fixed design and true covariances ``(X, C0, V0)`` of a setting."""
    rng = _case_rng(spec)
    n, d = spec.n, spec.d
    X = rng.standard_normal((n, d))
    if spec.case_id == 1:
        c = np.ones(d)
    else:
        c = np.zeros(d)
        c[rng.choice(d, size=spec.sparsity, replace=False)] = 1.0
    C0 = np.diag(c)
    v = float(np.sum((X * X) @ c)) / (spec.snr * n)
    vdiag = np.full(n, v)
    if spec.case_id == 3 and spec.outlier_count:
        vdiag[rng.choice(n, size=spec.outlier_count, replace=False)] = spec.outlier_variance
    return X, C0, np.diag(vdiag)


def _gaussian(cov: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # zero-variance directions come out exactly zero
    if not np.any(cov - np.diag(np.diag(cov))):
        return np.sqrt(np.maximum(np.diag(cov), 0.0)) * rng.standard_normal(cov.shape[0])
    L = linalg.spectral_factor(cov).sqrt()
    return L @ rng.standard_normal(L.shape[1])


def sample_trial(X, C0, V0, rng: np.random.Generator):
    """Draw ``theta ~ N(0, C0)`` and ``y = X theta + eps`` with ``eps ~ N(0, V0)``."""
    X = np.asarray(X, dtype=float)
    theta = _gaussian(linalg.as_psd(C0), rng)
    eps = _gaussian(linalg.as_psd(V0), rng)
    return theta, X @ theta + eps


def oracle_nmse(X, C0, V0) -> float:
    """NMSE of the LMMSE estimator, ``tr(C0 - C0 X^T R0^+ X C0) / tr(C0)``."""
    X = np.asarray(X, dtype=float)
    C0 = linalg.as_psd(C0)
    V0 = linalg.as_psd(V0)
    tc = float(np.trace(C0))
    if tc <= 0:
        raise InvalidInputError("tr(C0) = 0: NMSE is undefined")
    R = X @ C0 @ X.T + V0
    XC = X @ C0
    return max(float(tc - np.trace(XC.T @ linalg.pseudo_inverse(R) @ XC)) / tc, 0.0)


@dataclass
class NmseCurve:
    label: str
    case_id: int
    lambdas: np.ndarray
    nmse: np.ndarray
    stderr: np.ndarray
    tuned_lambda: float
    tuned_nmse: float
    tuned_stderr: float
    oracle_nmse: float
    trials: int
    failed_trials: int = 0
    spec: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        return _io.csv_text(
            ["lambda", "nmse", "stderr"], zip(self.lambdas, self.nmse, self.stderr)
        )

    def metadata(self) -> dict:
        return {
            "label": self.label,
            "case_id": self.case_id,
            "tuned_lambda": float(self.tuned_lambda),
            "tuned_nmse": float(self.tuned_nmse),
            "tuned_stderr": float(self.tuned_stderr),
            "oracle_nmse": float(self.oracle_nmse),
            "trials": self.trials,
            "failed_trials": self.failed_trials,
            "spec": self.spec,
        }


def _mean_se(E: np.ndarray):
    m = E.shape[-1]
    mean = E.mean(axis=-1)
    se = E.std(axis=-1, ddof=1) / np.sqrt(m) if m > 1 else np.zeros_like(mean)
    return mean, se


def nmse_curve(
    spec: ExperimentCase,
    c_structure,
    v_structure,
    lambdas=None,
    trials: int = 200,
    opts: SolverOptions | None = None,
) -> NmseCurve:
    """Monte Carlo NMSE of one tuned estimator family over a lambda grid.

    All lambdas (and all estimators of the same setting) see the same
    draws. A trial whose solve fails at any lambda is dropped from every
    point of the curve; more than 1% dropped trials raises.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    sC, sV = CovStructure.parse(c_structure), CovStructure.parse(v_structure)
    lambdas = default_lambdas() if lambdas is None else np.asarray(lambdas, dtype=float)
    if lambdas.ndim != 1 or lambdas.size == 0 or np.any(lambdas < 0) or not np.all(np.isfinite(lambdas)):
        raise InvalidInputError("lambdas must be a non-empty list of finite values >= 0")
    lambdas = np.sort(lambdas)
    opts = opts or SolverOptions(objective_tol=1e-6)

    X, C0, V0 = generate_case(spec)
    Theta = np.empty((spec.d, trials))
    Y = np.empty((spec.n, trials))
    for t in range(trials):
        Theta[:, t], Y[:, t] = sample_trial(X, C0, V0, trial_rng(spec, t))
    crit = tuned_criterion(sC, sV, Dataset(X, Y[:, 0]))
    lam_star = crit.lam

    grid = np.append(lambdas, lam_star)
    out = solve_path(crit, X, Y, grid, opts)
    ok = np.ones(trials, dtype=bool)
    E = np.empty((grid.size, trials))
    for i, results in enumerate(out):
        for t, r in enumerate(results):
            ok[t] &= r.converged
            E[i, t] = np.sum((Theta[:, t] - r.theta) ** 2)
    failed = int(trials - ok.sum())
    if failed > MAX_FAILED_FRACTION * trials:
        raise ConvergenceError(
            f"case {spec.case_id}, {crit.name}: {failed} of {trials} trials did not converge"
        )
    E = E[:, ok] / np.trace(C0)
    mean, se = _mean_se(E)
    return NmseCurve(
        label=crit.name,
        case_id=spec.case_id,
        lambdas=lambdas,
        nmse=mean[:-1],
        stderr=se[:-1],
        tuned_lambda=float(lam_star),
        tuned_nmse=float(mean[-1]),
        tuned_stderr=float(se[-1]),
        oracle_nmse=oracle_nmse(X, C0, V0),
        trials=int(ok.sum()),
        failed_trials=failed,
        spec={**asdict(spec), "c_structure": sC.value, "v_structure": sV.value},
    )


# ---------------------------------------------------------------- suite runner

DEFAULT_CONFIG = {
    "cases": [1, 2, 3],
    "n": 40,
    "d": 40,
    "trials": 200,
    "seed": 0,
    "snr": 10.0,
    "sparsity": None,
    "outlier_count": 2,
    "outlier_variance": 500.0,
    "lambda_min": 1e-3,
    "lambda_max": 2.0,
    "lambda_count": 60,
    "extra_lambdas": [10.0],
    "estimators": [f"{c.value}/{v.value}" for c, v in TABLE1_PAIRS],
    "objective_tol": 1e-6,
    "max_iterations": 20000,
}

_INT_KEYS = {"n", "d", "trials", "seed", "outlier_count", "lambda_count", "max_iterations"}
_FLOAT_KEYS = {"snr", "outlier_variance", "lambda_min", "lambda_max", "objective_tol"}


def validate_config(cfg: dict) -> dict:
    """Merge ``cfg`` over the defaults, checking every key and type."""
    if not isinstance(cfg, dict):
        raise InvalidInputError("config must be a JSON object")
    unknown = sorted(set(cfg) - set(DEFAULT_CONFIG))
    if unknown:
        raise InvalidInputError(f"unknown config key(s): {', '.join(unknown)}")
    out = dict(DEFAULT_CONFIG)
    out.update(cfg)
    for k in _INT_KEYS:
        if isinstance(out[k], bool) or not isinstance(out[k], int):
            raise InvalidInputError(f"config key {k!r} must be an integer")
    for k in _FLOAT_KEYS:
        if isinstance(out[k], bool) or not isinstance(out[k], (int, float)):
            raise InvalidInputError(f"config key {k!r} must be a number")
        out[k] = float(out[k])
    if out["sparsity"] is not None and (isinstance(out["sparsity"], bool) or not isinstance(out["sparsity"], int)):
        raise InvalidInputError("config key 'sparsity' must be an integer or null")
    if not isinstance(out["cases"], list) or not out["cases"] or any(c not in (1, 2, 3) for c in out["cases"]):
        raise InvalidInputError("config key 'cases' must be a non-empty list drawn from 1, 2, 3")
    if out["trials"] < 1:
        raise InvalidInputError("config key 'trials' must be >= 1")
    if out["lambda_count"] < 1 or not 0 < out["lambda_min"] < out["lambda_max"]:
        raise InvalidInputError("config keys 'lambda_*' must satisfy 0 < lambda_min < lambda_max, count >= 1")
    if not isinstance(out["extra_lambdas"], list) or any(
        isinstance(x, bool) or not isinstance(x, (int, float)) or x < 0 for x in out["extra_lambdas"]
    ):
        raise InvalidInputError("config key 'extra_lambdas' must be a list of numbers >= 0")
    if not isinstance(out["estimators"], list) or not out["estimators"]:
        raise InvalidInputError("config key 'estimators' must be a non-empty list")
    pairs = []
    for e in out["estimators"]:
        parts = str(e).split("/")
        if len(parts) != 2:
            raise InvalidInputError(f"config key 'estimators': {e!r} is not of the form C/V")
        pairs.append(f"{CovStructure.parse(parts[0]).value}/{CovStructure.parse(parts[1]).value}")
    out["estimators"] = pairs
    return out


def config_lambdas(cfg: dict) -> np.ndarray:
    grid = np.geomspace(cfg["lambda_min"], cfg["lambda_max"], cfg["lambda_count"])
    return np.unique(np.concatenate([[0.0], grid, np.asarray(cfg["extra_lambdas"], dtype=float)]))


def _curve_job(args):
    spec, pair, lambdas, trials, opts = args
    sC, sV = pair.split("/")
    return nmse_curve(spec, sC, sV, lambdas, trials, opts)


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        k = int(raw)
    except ValueError:
        raise InvalidInputError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, k)


def run_suite(cfg: dict, out_dir, workers: int | None = None) -> list[NmseCurve]:
    """Run every (case, estimator) curve of a config and write the results.

    Writes ``case<k>_<label>.csv`` with the curve, a ``.json`` sidecar with
    the tuned and oracle values, and ``summary.csv`` / ``summary.json``.
    Curves may be computed in worker processes; the output does not depend
    on their number.
    """
    cfg = validate_config(cfg)
    out_dir = Path(out_dir)
    lambdas = config_lambdas(cfg)
    opts = SolverOptions(objective_tol=cfg["objective_tol"], max_iterations=cfg["max_iterations"])
    jobs = []
    for case_id in cfg["cases"]:
        spec = ExperimentCase(
            case_id=case_id, n=cfg["n"], d=cfg["d"], snr=cfg["snr"], sparsity=cfg["sparsity"],
            outlier_count=cfg["outlier_count"], outlier_variance=cfg["outlier_variance"], seed=cfg["seed"],
        )
        for pair in cfg["estimators"]:
            jobs.append((spec, pair, lambdas, cfg["trials"], opts))
    workers = worker_count() if workers is None else max(1, workers)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            curves = list(ex.map(_curve_job, jobs))
    else:
        curves = [_curve_job(j) for j in jobs]

    rows = []
    for curve, (spec, pair, *_rest) in zip(curves, jobs):
        stem = f"case{curve.case_id}_{curve.label}"
        _io.atomic_write_text(out_dir / f"{stem}.csv", curve.to_csv())
        _io.atomic_write_text(out_dir / f"{stem}.json", _io.json_text(curve.metadata()))
        rows.append(
            [curve.case_id, curve.label, pair, curve.tuned_lambda, curve.tuned_nmse,
             curve.tuned_stderr, curve.oracle_nmse, float(curve.nmse.min()), curve.trials,
             curve.failed_trials]
        )
    header = ["case", "estimator", "structures", "tuned_lambda", "tuned_nmse", "tuned_stderr",
              "oracle_nmse", "min_nmse", "trials", "failed_trials"]
    _io.atomic_write_text(out_dir / "summary.csv", _io.csv_text(header, rows))
    _io.atomic_write_text(
        out_dir / "summary.json",
        _io.json_text({"config": cfg, "rows": [dict(zip(header, r)) for r in rows]}),
    )
    return curves
