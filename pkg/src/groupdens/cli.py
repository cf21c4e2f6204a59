"""Command-line interface: ``fit``, ``simulate``, ``check`` and ``plot``.

Exit codes: 0 success (fit converged, all checks passed), 1 invalid input or
configuration, 2 fit did not converge (the report is still written) or a
check failed.  Errors are printed to standard error as one JSON object with
a machine-readable ``code``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from .dataset import DatasetError
from .em_fitter import FitConfig, fit
from .grid_basis import GridError
from .reports import (
    build_fit_report,
    emit_plot_data,
    simulation_report_document,
    validate_report,
    write_json_atomic,
)
from .sim_harness import CUTS_J3, CUTS_J5, DEFAULT_P, default_workers, run_study
from .table_io import TableValidationError, parse_summary_table

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2


class UsageError(ValueError):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(message)


def _error(code: str, message: str, location: str | None = None) -> int:
    doc = {"error": code, "message": message}
    if location:
        doc["location"] = location
    print(json.dumps(doc), file=sys.stderr)
    return EXIT_INVALID


def _probabilities(text: str) -> list:
    if text is None or not text.strip():
        return []
    try:
        probs = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError("E_QUANTILES", f"cannot parse quantile list {text!r}") from None
    if any(not 0.0 < p < 1.0 for p in probs):
        raise UsageError("E_QUANTILES", "quantile probabilities must lie in (0, 1)")
    return probs


def _lambda(text: str):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise UsageError("E_LAMBDA", f"--lambda must be 'auto' or a number, got {text!r}"
                         ) from None
    if not value > 0:
        raise UsageError("E_LAMBDA", "--lambda must be positive")
    return value


def _fit_config(args) -> FitConfig:
    try:
        return FitConfig(K=args.splines, target_bins=args.bins, align_bins=not args.exact_bins,
                         penalty_order=args.penalty_order, lam=_lambda(args.lambda_))
    except UsageError:
        raise
    except ValueError as exc:
        raise UsageError("E_CONFIG", str(exc)) from None


def cmd_fit(args) -> int:
    start = time.perf_counter()
    dataset = parse_summary_table(args.data)
    if args.moments != "auto":
        order = int(args.moments)
        if order > dataset.order:
            raise UsageError("E_MOMENTS", f"--moments {order} requested but the table only "
                             f"carries moments up to order {dataset.order}")
        dataset = dataset.with_order(order)
    probs = _probabilities(args.quantiles)
    if not 0.0 < args.alpha <= 1.0:
        raise UsageError("E_ALPHA", "--alpha must lie in (0, 1]")
    config = _fit_config(args)
    loaded = time.perf_counter()
    result = fit(dataset, config)
    fitted_at = time.perf_counter()
    options = {"data": str(args.data), "moments": args.moments, "quantiles": probs,
               "alpha": args.alpha, "back_transform": args.back_transform, "seed": args.seed}
    report = build_fit_report(result, options=options, probs=probs, alpha=args.alpha,
                              back_transform=args.back_transform)
    report["timings"] = {"load_seconds": loaded - start, "fit_seconds": fitted_at - loaded,
                         "total_seconds": time.perf_counter() - start}
    write_json_atomic(args.out, report)
    if args.plot_dir:
        emit_plot_data(report, args.plot_dir, svg=args.svg)
    for row in report.get("quantiles", []):
        bt = row.get("back_transformed", row)
        print(f"Q({row['p']:g}) = {bt['estimate']:.6g}  "
              f"[{bt['lower']:.6g}, {bt['upper']:.6g}]  ({100 * (1 - row['alpha']):g}% interval)")
    status = "converged" if result.converged else "NOT converged"
    print(f"{status} after {result.em_iters} EM iterations; lambda={result.lam:.4g}, "
          f"edf={result.edf:.3f}; report written to {args.out}")
    if not result.converged:
        print(json.dumps({"error": "E_NOT_CONVERGED",
                          "message": f"EM stopped after {result.em_iters} iterations"}),
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cuts(text: str) -> tuple:
    if text == "3":
        return CUTS_J3
    if text == "5":
        return CUTS_J5
    try:
        cuts = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError("E_CLASSES", f"--classes must be 3, 5 or a cut list, got {text!r}"
                         ) from None
    if len(cuts) < 2 or any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise UsageError("E_CLASSES", "class cuts must be strictly increasing")
    if cuts[0] < -1.0 or cuts[-1] > 6.0:
        raise UsageError("E_CLASSES", "class cuts must lie within the truth support [-1, 6]")
    return cuts


def cmd_simulate(args) -> int:
    start = time.perf_counter()
    if args.reps < 1 or args.n < 1:
        raise UsageError("E_CONFIG", "--reps and --n must be positive")
    if args.moments not in (0, 1, 2, 4):
        raise UsageError("E_MOMENTS", "--moments must be 0, 1, 2 or 4")
    cuts = _cuts(args.classes)
    config = FitConfig()
    workers = args.workers if args.workers is not None else default_workers()
    report = run_study(args.reps, args.n, cuts, args.moments, seed=args.seed, config=config,
                       probs=DEFAULT_P, workers=workers)
    doc = simulation_report_document(report, config, workers=workers,
                                     timings={"total_seconds": time.perf_counter() - start})
    validate_report(doc)
    write_json_atomic(args.out, doc)
    print(f"{report.used}/{report.S} replicates used ({report.non_converged} not converged, "
          f"{report.failed} failed); median KL {report.median_kl:.4g}; "
          f"report written to {args.out}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    both = not (args.gradients or args.invariants)
    results = run_checks(gradients=args.gradients or both,
                         invariants=args.invariants or both, seed=args.seed)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_NOT_CONVERGED


def cmd_plot(args) -> int:
    try:
        with open(args.report, encoding="utf-8") as fh:
            report = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError("E_IO", f"cannot read report {args.report}: {exc}") from None
    if report.get("kind") != "fit_report":
        raise UsageError("E_REPORT", "plot needs a fit report")
    paths = emit_plot_data(report, args.out, svg=args.svg)
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groupdens",
        description="Smooth density, quantile and Value-at-Risk estimation from grouped "
                    "frequencies and class moments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log EM progress")
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a summary table and write a JSON report")
    f.add_argument("--data", required=True, help="summary table (CSV or JSON)")
    f.add_argument("--moments", default="auto", choices=["0", "1", "2", "4", "auto"],
                   help="number of class moments to use (default: all in the table)")
    f.add_argument("--splines", type=int, default=25, help="number of B-splines K")
    f.add_argument("--bins", type=int, default=300, help="target number of fine bins")
    f.add_argument("--exact-bins", action="store_true",
                   help="use exactly --bins bins instead of the nearest count that puts "
                        "every class cut on a bin edge")
    f.add_argument("--penalty-order", type=int, default=2, help="difference penalty order")
    f.add_argument("--lambda", dest="lambda_", default="auto",
                   help="penalty parameter or 'auto' (default)")
    f.add_argument("--quantiles", default="", help="comma-separated probabilities")
    f.add_argument("--alpha", type=float, default=0.05, help="credible interval level")
    f.add_argument("--back-transform", choices=["none", "exp10"], default="none",
                   help="report quantiles as 10**q (for log10 data)")
    f.add_argument("--out", required=True, help="report path (JSON)")
    f.add_argument("--seed", type=int, default=0,
                   help="recorded in the report; the fit itself is deterministic")
    f.add_argument("--plot-dir", help="also write histogram/curve CSV files here")
    f.add_argument("--svg", action="store_true", help="with --plot-dir, also draw plot.svg")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="run the mixture simulation study")
    s.add_argument("--reps", type=int, default=100, help="number of replicates S")
    s.add_argument("--n", type=int, default=1000, help="sample size per replicate")
    s.add_argument("--classes", default="3", help="3, 5 or comma-separated class cuts")
    s.add_argument("--moments", type=int, default=4, help="moment order R (0, 1, 2 or 4)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $GROUPDENS_THREADS or 1)")
    s.add_argument("--out", required=True, help="report path (JSON)")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("check", help="run gradient and invariant self-checks")
    c.add_argument("--gradients", action="store_true", help="finite-difference suites")
    c.add_argument("--invariants", action="store_true", help="invariant suites")
    c.add_argument("--seed", type=int, default=0, help="seed for random check points")
    c.set_defaults(func=cmd_check)

    p = sub.add_parser("plot", help="write plot data for a fit report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TableValidationError as exc:
        return _error(exc.code, exc.message, exc.location)
    except UsageError as exc:
        return _error(exc.code, str(exc))
    except (DatasetError, GridError) as exc:
        return _error("E_DATASET", str(exc))
    except ValueError as exc:
        return _error("E_CONFIG", str(exc))
    except OSError as exc:
        return _error("E_IO", str(exc))


if __name__ == "__main__":
    sys.exit(main())
