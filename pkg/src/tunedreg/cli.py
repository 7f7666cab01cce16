"""Command line front end.

Subcommands::

    tunedreg fit X.csv y.csv --C identity --V 0.5 [--method weighted|lmmse|blue] [--out DIR]
    tunedreg tune X.csv y.csv --structure-c diagonal --structure-v diagonal [--lambda L] [--out DIR]
    tunedreg lambda X.csv --structure-c scaled_identity
    tunedreg experiment [--config cfg.json] [--seed S] [--trials T] [--out DIR]

``X`` and ``y`` are headerless CSV files (rows are observations). Outputs
carry a header line. Exit status: 0 success, 2 infeasible problem, 3 solver
non-convergence, 4 input error. ``TUNEDREG_NUM_THREADS`` sets the number of
worker processes used by ``experiment``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import _io
from .covfit import CovStructure, tuned_estimate, tuned_lambda, tuned_criterion
from .estimators import Dataset, WeightPair, blue, estimate_weighted, lmmse
from .exceptions import ConvergenceError, InfeasibleError, InvalidInputError, NotAttainedError
from .experiments import run_suite
from .solvers import SolverOptions, solve

EXIT_OK, EXIT_INFEASIBLE, EXIT_NONCONVERGED, EXIT_INPUT = 0, 2, 3, 4

STRUCTURES = ["scaled_identity", "diagonal", "unstructured"]


def _load_data(args) -> Dataset:
    X = _io.read_matrix_csv(args.X, name="X")
    y = _io.read_vector_csv(args.y, name="y")
    return Dataset(X, y)


def _weight(spec: str, m: int, name: str) -> np.ndarray:
    """``identity``, ``zero``, a number ``c`` (meaning ``c I``) or a CSV file.

    A CSV with a single row or column is read as a diagonal.
    """
    s = spec.strip().lower()
    if s in ("identity", "eye", "i"):
        return np.eye(m)
    if s in ("zero", "0"):
        return np.zeros((m, m))
    try:
        return float(s) * np.eye(m)
    except ValueError:
        pass
    A = _io.read_matrix_csv(spec, name=name)
    if A.shape == (m, m):
        return A
    if A.size == m and 1 in A.shape:
        return np.diag(A.ravel())
    raise InvalidInputError(f"{name}: expected {m}x{m} matrix or {m} diagonal entries, got {A.shape}")


def _write_vector(path: Path, header: str, v) -> None:
    _io.atomic_write_text(path, _io.csv_text([header], ([float(x)] for x in np.ravel(v))))


def _write_weight(path: Path, W: np.ndarray, structure: CovStructure, prefix: str) -> None:
    if structure is CovStructure.UNSTRUCTURED:
        header = [f"{prefix}{j + 1}" for j in range(W.shape[1])]
        _io.atomic_write_text(path, _io.csv_text(header, ([float(x) for x in row] for row in W)))
    else:
        _write_vector(path, f"{prefix}_diag", np.diag(W))


def cmd_fit(args) -> int:
    data = _load_data(args)
    V = _weight(args.V, data.n, "V")
    if args.method == "blue":
        rep = blue(V, data)
    else:
        if args.C is None:
            raise InvalidInputError(f"--C is required for --method {args.method}")
        C = _weight(args.C, data.d, "C")
        if args.method == "lmmse":
            rep = lmmse(C, V, data)
        else:
            rep = estimate_weighted(WeightPair(C, V), data)
    out = Path(args.out)
    _write_vector(out / "theta.csv", "theta", rep.theta)
    diag = {
        "method": args.method,
        "residual_range_gap": rep.residual_range_gap,
        "objective": rep.objective,
    }
    for k, v in rep.diagnostics.items():
        if np.ndim(v) == 0:
            diag[k] = v.item() if isinstance(v, np.generic) else v
    _io.atomic_write_text(out / "report.json", _io.json_text(diag))
    print(f"feasibility gap   {rep.residual_range_gap:.3e}")
    print(f"objective         {rep.objective:.12g}")
    for k, v in diag.items():
        if k not in ("method", "residual_range_gap", "objective"):
            print(f"{k:<17} {v}")
    print(f"wrote {out / 'theta.csv'}")
    return EXIT_OK


def _solver_opts(args) -> SolverOptions:
    return SolverOptions(objective_tol=args.tol, max_iterations=args.max_iterations, seed=args.seed)


def cmd_tune(args) -> int:
    data = _load_data(args)
    sC, sV = CovStructure.parse(args.structure_c), CovStructure.parse(args.structure_v)
    out = Path(args.out)
    if args.lambda_ is not None:
        # plain regularized fit; the covariance-fit weights only exist at the tuned lambda
        crit = tuned_criterion(sC, sV, data).with_lambda(args.lambda_)
        res = solve(crit, data, _solver_opts(args))
        if not res.converged:
            raise ConvergenceError(f"{crit.name} did not converge (gap {res.certificate_gap:.2e})")
        _write_vector(out / "theta.csv", "theta", res.theta)
        report = {"criterion": crit.name, "lambda": crit.lam, "objective": res.objective,
                  "iterations": res.iterations, "tuned": False}
        _io.atomic_write_text(out / "report.json", _io.json_text(report))
        print(f"criterion {crit.name}  lambda {crit.lam:.12g} (override)  objective {res.objective:.12g}")
        return EXIT_OK
    rep = tuned_estimate(sC, sV, data, _solver_opts(args))
    _write_vector(out / "theta.csv", "theta", rep.theta)
    _write_weight(out / "C_hat.csv", rep.C_hat, sC, "c")
    _write_weight(out / "V_hat.csv", rep.V_hat, sV, "v")
    crit = rep.criterion
    report = {
        "criterion": crit.name if crit else None,
        "lambda": crit.lam if crit else None,
        "objective": rep.objective,
        "spice_criterion": rep.spice_value,
        "cost_J": rep.cost_J,
        "identity_residual": rep.identity_residual,
        "roundtrip_gap": rep.roundtrip_gap,
        "residual_range_gap": rep.residual_range_gap,
        "tuned": True,
        **{k: (v.item() if isinstance(v, np.generic) else v) for k, v in rep.diagnostics.items()},
    }
    _io.atomic_write_text(out / "report.json", _io.json_text(report))
    if crit is not None:
        print(f"criterion          {crit.name}  lambda {crit.lam:.12g}")
    print(f"objective          {rep.objective:.12g}")
    print(f"identity residual  {rep.identity_residual:.3e}")
    print(f"round-trip gap     {rep.roundtrip_gap:.3e}")
    print(f"wrote {out}/theta.csv, C_hat.csv, V_hat.csv, report.json")
    return EXIT_OK


def cmd_lambda(args) -> int:
    X = _io.read_matrix_csv(args.X, name="X")
    print(repr(float(tuned_lambda(args.structure_c, X))))
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise InvalidInputError(f"config: no such file {path}")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"config: {path}: line {e.lineno}: {e.msg}") from None
        if not isinstance(cfg, dict):
            raise InvalidInputError("config must be a JSON object")
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.trials is not None:
        cfg["trials"] = args.trials
    curves = run_suite(cfg, args.out)
    print(f"{'case':<5}{'estimator':<10}{'tuned lam':>11}{'tuned NMSE':>12}{'stderr':>9}{'oracle':>9}{'min NMSE':>10}")
    for c in curves:
        print(
            f"{c.case_id:<5}{c.label:<10}{c.tuned_lambda:>11.4f}{c.tuned_nmse:>12.4f}"
            f"{c.tuned_stderr:>9.4f}{c.oracle_nmse:>9.4f}{c.nmse.min():>10.4f}"
        )
    print(f"wrote {len(curves)} curves and summary to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tunedreg", description="Covariance-fitted regularized regression.")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="weighted estimate for given weight matrices")
    f.add_argument("X")
    f.add_argument("y")
    f.add_argument("--C", help="prior weight: identity, zero, a number c (c*I) or a CSV file")
    f.add_argument("--V", default="identity", help="noise weight, same forms as --C")
    f.add_argument("--method", choices=["weighted", "lmmse", "blue"], default="weighted",
                   help="lmmse reads --C / --V as prior and noise covariances")
    f.add_argument("--out", default=".")
    f.set_defaults(func=cmd_fit)

    def solver_flags(q):
        q.add_argument("--tol", type=float, default=1e-12, help="solver objective tolerance")
        q.add_argument("--max-iterations", type=int, default=50000)
        q.add_argument("--seed", type=int, default=None)

    t = sub.add_parser("tune", help="covariance-fitted estimate with recovered weights")
    t.add_argument("X")
    t.add_argument("y")
    t.add_argument("--structure-c", choices=STRUCTURES, default="diagonal")
    t.add_argument("--structure-v", choices=STRUCTURES, default="scaled_identity")
    t.add_argument("--lambda", dest="lambda_", type=float, default=None,
                   help="solve the matching criterion at this lambda instead of the tuned one")
    t.add_argument("--out", default=".")
    solver_flags(t)
    t.set_defaults(func=cmd_tune)

    lam = sub.add_parser("lambda", help="print the tuned lambda for a prior-weight structure")
    lam.add_argument("X")
    lam.add_argument("--structure-c", choices=STRUCTURES, default="diagonal")
    lam.set_defaults(func=cmd_lambda)

    e = sub.add_parser("experiment", help="Monte Carlo NMSE curves")
    e.add_argument("--config", default=None, help="JSON object overriding the defaults")
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--trials", type=int, default=None)
    e.add_argument("--out", default="results")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as e:
        print(f"not converged: {e}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (InvalidInputError, NotAttainedError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
