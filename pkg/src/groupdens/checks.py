"""Self-checks: finite-difference gradient suites and model invariants.

Each check returns a :class:`CheckResult`.  Random evaluation points are drawn
from ``numpy.random.default_rng(seed)``, so a given seed always probes the
same points.  The analytic derivatives are looked up through their modules at
call time, which lets a test substitute a deliberately broken implementation
and confirm that the suite catches it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import density_model, em_fitter, risk_inference
from .dataset import GroupedDataset
from .density_model import class_central_moments, class_probabilities, softmax_probabilities
from .em_fitter import FitConfig, e_step, fit, make_setup
from .grid_basis import build_basis, build_fine_grid
from .risk_inference import FittedDensity, cdf_at, quantile
from .table_io import SummaryTable, format_summary_table, read_summary_table

POINTS = 20
GRAD_TOL = 1e-5
QUANTILE_GRAD_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def reference_dataset(order: int = 4, seed: int = 0) -> GroupedDataset:
    """A simulated J=3 dataset from the mixture truth of the simulation study."""
    from .sim_harness import CUTS_J3, sample_truth, tabulate

    return tabulate(sample_truth(1000, seed), CUTS_J3, 4).with_order(order)


def relative_error(analytic, numeric) -> float:
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def central_difference(f, x, h: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def _random_theta(rng, K: int, scale: float = 0.5) -> np.ndarray:
    # smooth random coefficients: a random walk keeps every class populated
    return np.cumsum(rng.normal(0.0, scale, K)) * 0.5


def _summary(name: str, errors: list, tol: float) -> CheckResult:
    worst = max(errors)
    return CheckResult(name, worst < tol,
                       f"max relative error {worst:.2e} over {len(errors)} points (tol {tol:g})")


# --------------------------------------------------------------------------- gradients

def check_objective_gradient(order: int, seed: int = 0, points: int = POINTS) -> CheckResult:
    """Gradient of the penalized complete log-likelihood with frozen scales."""
    rng = np.random.default_rng([seed, 1, order])
    setup = make_setup(reference_dataset(order, seed), FitConfig())
    errors = []
    for _ in range(points):
        theta = _random_theta(rng, setup.basis.K)
        lam = float(10 ** rng.uniform(-1, 2))
        k = e_step(theta, setup)
        sinv = em_fitter.frozen_inverse_scales(theta, setup)
        grad, _ = em_fitter.mstep_gradient_hessian(theta, k, setup, lam, sinv)
        numeric = central_difference(
            lambda t: em_fitter.complete_objective(t, k, setup, lam, sinv), theta, 1e-5)
        errors.append(relative_error(grad, numeric))
    return _summary(f"objective gradient (order {order})", errors, GRAD_TOL)


def check_moment_derivatives(seed: int = 0, points: int = POINTS) -> CheckResult:
    """Derivatives of the class mean and central moments of orders 2-4."""
    rng = np.random.default_rng([seed, 2])
    grid = build_fine_grid((-1.0, 1.0, 3.5, 6.0), 300)
    basis = build_basis(grid, 25)

    def moments_of(t):
        return class_central_moments(softmax_probabilities(t, basis.B), grid).mu[:, :4]

    errors = []
    for _ in range(points):
        theta = _random_theta(rng, basis.K)
        mom = class_central_moments(softmax_probabilities(theta, basis.B), grid)
        analytic = density_model.moment_derivatives(theta, basis, grid, mom, order=4)
        numeric = central_difference(moments_of, theta, 1e-5)
        errors.append(max(relative_error(analytic[:, r], numeric[:, r]) for r in range(4)))
    return _summary("moment derivatives (orders 1-4)", errors, GRAD_TOL)


def check_quantile_gradient(seed: int = 0, points: int = POINTS) -> CheckResult:
    rng = np.random.default_rng([seed, 3])
    grid = build_fine_grid((-1.0, 1.0, 3.5, 6.0), 300)
    basis = build_basis(grid, 25)
    errors = []
    for _ in range(points):
        theta = _random_theta(rng, basis.K)
        p = float(rng.uniform(0.02, 0.98))
        fitted = FittedDensity.from_theta(theta, basis, grid)
        analytic = risk_inference.quantile_gradient(p, fitted)
        numeric = central_difference(
            lambda t: quantile(p, FittedDensity.from_theta(t, basis, grid)), theta, 1e-6)
        errors.append(relative_error(analytic, numeric))
    return _summary("quantile gradient", errors, QUANTILE_GRAD_TOL)


def check_frequency_hessian(seed: int = 0, points: int = 10) -> CheckResult:
    """Information from the class frequencies against a differenced gradient."""
    rng = np.random.default_rng([seed, 4])
    data = reference_dataset(0, seed)
    setup = make_setup(data, FitConfig())
    P = setup.penalty.P

    def gradient(t, lam):
        pi = softmax_probabilities(t, setup.basis.B)
        gamma = class_probabilities(pi, setup.grid.composition)
        ratio = (data.freqs / gamma)[setup.grid.bin_class]
        return setup.basis.B.T @ (ratio * pi - data.n * pi) - lam * P @ t

    errors = []
    for _ in range(points):
        theta = _random_theta(rng, setup.basis.K)
        lam = float(10 ** rng.uniform(-1, 2))
        analytic = risk_inference.frequency_neg_hessian(
            theta, setup.basis, setup.grid, data.freqs, lam, P)
        numeric = -central_difference(lambda t: gradient(t, lam), theta, 1e-5)
        errors.append(relative_error(analytic, numeric))
    return _summary("frequency information matrix", errors, GRAD_TOL)


def gradient_checks(seed: int = 0) -> list:
    return [
        check_objective_gradient(0, seed),
        check_objective_gradient(1, seed),
        check_objective_gradient(4, seed),
        check_moment_derivatives(seed),
        check_quantile_gradient(seed),
        check_frequency_hessian(seed),
    ]


# --------------------------------------------------------------------------- invariants

def check_softmax_normalization(seed: int = 0, draws: int = 100) -> CheckResult:
    rng = np.random.default_rng([seed, 10])
    grid = build_fine_grid((-1.0, 1.0, 2.2, 3.5, 4.8, 6.0), 300)
    basis = build_basis(grid, 25)
    worst = 0.0
    for _ in range(draws):
        theta = rng.normal(0.0, 3.0, basis.K)
        pi = softmax_probabilities(theta, basis.B)
        gamma = class_probabilities(pi, grid.composition)
        worst = max(worst, abs(pi.sum() - 1.0), abs(gamma.sum() - 1.0))
    return CheckResult("softmax normalization", worst < 1e-12,
                       f"max |sum - 1| = {worst:.1e} over {draws} draws")


def check_partition_of_unity(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng([seed, 11])
    grid = build_fine_grid((0.0, 3.0, 4.3, 6.18), 309)
    basis = build_basis(grid, 25)
    x = rng.uniform(grid.a0, grid.aJ, 500)
    worst = max(np.max(np.abs(basis.B.sum(axis=1) - 1.0)),
                np.max(np.abs(basis.evaluate(x).sum(axis=1) - 1.0)))
    return CheckResult("partition of unity", worst < 1e-12,
                       f"max |row sum - 1| = {worst:.1e}")


def check_mass_conservation(seed: int = 0, draws: int = 20) -> CheckResult:
    rng = np.random.default_rng([seed, 12])
    setup = make_setup(reference_dataset(0, seed), FitConfig())
    worst = 0.0
    for _ in range(draws):
        k = e_step(rng.normal(0.0, 2.0, setup.basis.K), setup)
        sums = np.bincount(setup.grid.bin_class, weights=k, minlength=setup.grid.J)
        worst = max(worst, float(np.max(np.abs(sums - setup.dataset.freqs))))
    return CheckResult("E-step mass conservation", worst < 1e-10,
                       f"max |class sum - n_j| = {worst:.1e}")


def check_em_ascent(seed: int = 0) -> list:
    """Observed penalized log-likelihood along EM at a fixed penalty."""
    out = []
    for order, slack in ((0, 1e-8), (1, 1e-4), (4, 1e-4)):
        data = reference_dataset(order, seed)
        max_iters = 300 if order == 0 else 5000
        res = fit(data, FitConfig(lam=10.0, em_max_iters=max_iters), with_information=False)
        trace = np.asarray(res.loglik_trace)
        drops = -np.diff(trace)
        worst = float(drops.max()) if len(drops) else 0.0
        ok = worst <= slack
        detail = f"largest decrease {max(worst, 0.0):.1e} (slack {slack:g})"
        if order > 0:
            tail = np.abs(np.diff(trace[-6:]))
            ok = ok and res.converged and bool(np.all(tail < 1e-6))
            detail += f"; final changes < {tail.max():.1e}; converged={res.converged}"
        out.append(CheckResult(f"EM ascent (order {order})", ok, detail))
    return out


def check_quantiles(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng([seed, 13])
    grid = build_fine_grid((-1.0, 1.0, 3.5, 6.0), 300)
    basis = build_basis(grid, 25)
    fitted = FittedDensity.from_theta(_random_theta(rng, basis.K), basis, grid)
    p = np.round(np.arange(1, 100) / 100, 2)
    q = quantile(p, fitted)
    monotone = bool(np.all(np.diff(q) > 0))
    round_p = float(np.max(np.abs(cdf_at(q, fitted) - p)))
    x = rng.uniform(grid.a0 + 1e-3, grid.aJ - 1e-3, 100)
    round_x = float(np.max(np.abs(quantile(cdf_at(x, fitted), fitted) - x)))
    ok = monotone and round_p < 1e-8 and round_x < 1e-6
    return CheckResult("quantile monotonicity and CDF round trip", ok,
                       f"monotone={monotone}, max |F(Q(p)) - p| = {round_p:.1e}, "
                       f"max |Q(F(x)) - x| = {round_x:.1e}")


def check_report_round_trip(seed: int = 0) -> CheckResult:
    from .reports import build_fit_report, dump_json, validate_report

    problems = []
    data = reference_dataset(4, seed)
    table = SummaryTable.from_dataset(data)
    for fmt in ("csv", "json"):
        back = read_summary_table(format_summary_table(table, fmt))
        if back != table:
            problems.append(f"{fmt} table differs after round trip")
    res = fit(data.with_order(2), FitConfig(), with_information=True)
    report = build_fit_report(res, options={"seed": seed}, probs=(0.5, 0.95))
    text = dump_json(report)
    if json.loads(text) != json.loads(dump_json(json.loads(text))):
        problems.append("fit report changes after reload")
    try:
        validate_report(json.loads(text))
    except Exception as exc:  # jsonschema.ValidationError or missing schema
        problems.append(f"schema: {exc}")
    curve = report["density_curve"]
    mass = float(np.trapezoid(curve["density"], curve["x"]))
    if not math.isclose(mass, 1.0, abs_tol=1e-6):
        problems.append(f"density curve integrates to {mass}")
    return CheckResult("report round trip", not problems,
                       "; ".join(problems) or "tables (csv, json) and fit report reload exactly")


def invariant_checks(seed: int = 0) -> list:
    return [
        check_softmax_normalization(seed),
        check_partition_of_unity(seed),
        check_mass_conservation(seed),
        *check_em_ascent(seed),
        check_quantiles(seed),
        check_report_round_trip(seed),
    ]


def run_checks(gradients: bool = True, invariants: bool = True, seed: int = 0) -> list:
    results = []
    if gradients:
        results += gradient_checks(seed)
    if invariants:
        results += invariant_checks(seed)
    return results
