"""Simulation study: mixture truth, tabulation, repeated fits, summaries.

Replicate ``s`` of a study draws its sample from
``numpy.random.default_rng(SeedSequence(seed).spawn(S)[s])`` (PCG64), so a
replicate only depends on ``(seed, s)`` and can run on any worker.
"""

from __future__ import annotations

import functools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .dataset import GroupedDataset
from .em_fitter import FitConfig, fit
from .evaluation import compare_densities
from .risk_inference import FittedDensity, density_at, quantile, quantile_credible_interval

log = logging.getLogger(__name__)

CUTS_J3 = (-1.0, 1.0, 3.5, 6.0)
CUTS_J5 = (-1.0, 1.0, 2.2, 3.5, 4.8, 6.0)
DEFAULT_P = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)
THREADS_ENV = "GROUPDENS_THREADS"


@dataclass(frozen=True)
class MixtureTruth:
    """``w1 N(mean1, var1) + w2 g(shift - x)`` with ``g`` a Gamma(shape, rate) density."""

    w1: float = 0.20
    w2: float = 0.80
    mean1: float = 1.0
    var1: float = 1.0 / 9.0
    shape: float = 11.0
    rate: float = 6.0
    shift: float = 5.6
    lower: float = -1.0
    upper: float = 6.0

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        sd = np.sqrt(self.var1)
        z = (x - self.mean1) / sd
        normal = np.exp(-0.5 * z * z) / (sd * np.sqrt(2.0 * np.pi))
        t = np.maximum(self.shift - x, 0.0)
        with np.errstate(divide="ignore"):
            log_g = (self.shape * np.log(self.rate) + (self.shape - 1.0) * np.log(t)
                     - self.rate * t - special.gammaln(self.shape))
        gam = np.where(t > 0, np.exp(log_g), 0.0)
        return self.w1 * normal + self.w2 * gam

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        normal = special.ndtr((x - self.mean1) / np.sqrt(self.var1))
        t = np.maximum(self.shift - x, 0.0)
        return self.w1 * normal + self.w2 * special.gammaincc(self.shape, self.rate * t)

    def quantile(self, p: float) -> float:
        return _truth_quantile(self, float(p))

    def mean(self) -> float:
        return self.w1 * self.mean1 + self.w2 * (self.shift - self.shape / self.rate)


@functools.lru_cache(maxsize=8192)
def _truth_quantile(truth: MixtureTruth, p: float) -> float:
    return float(optimize.brentq(lambda x: truth.cdf(x) - p, -5.0, truth.shift, xtol=1e-13))


TRUTH = MixtureTruth()


def true_quantile(p: float, truth: MixtureTruth = TRUTH) -> float:
    return truth.quantile(p)


def sample_truth(n: int, seed=None, truth: MixtureTruth = TRUTH) -> np.ndarray:
    """Draw ``n`` values, redrawing any that fall outside ``(lower, upper)``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = np.empty(0)
    while len(out) < n:
        m = n - len(out)
        first = rng.random(m) < truth.w1
        x = np.where(first,
                     rng.normal(truth.mean1, np.sqrt(truth.var1), m),
                     truth.shift - rng.gamma(truth.shape, 1.0 / truth.rate, m))
        out = np.concatenate([out, x[(x > truth.lower) & (x < truth.upper)]])
    return out


def tabulate(samples, class_cuts, max_order: int = 4) -> GroupedDataset:
    """Group raw values into ``(a_{j-1}, a_j]`` classes with central moments."""
    x = np.asarray(samples, dtype=float)
    cuts = np.asarray(class_cuts, dtype=float)
    if np.any(x <= cuts[0]) or np.any(x > cuts[-1]):
        raise ValueError("samples outside the class range (a0, aJ]")
    cls = np.searchsorted(cuts, x, side="left") - 1
    J = len(cuts) - 1
    freqs = np.bincount(cls, minlength=J)
    moments = np.full((J, 4), np.nan)
    for j in range(J):
        xs = x[cls == j]
        if len(xs) == 0:
            continue
        m = xs.mean()
        moments[j] = [m] + [np.mean((xs - m) ** r) for r in (2, 3, 4)]
    return GroupedDataset(cuts, freqs, moments, max_order)


@dataclass
class QuantileSummary:
    p: float
    true: float
    mean: float
    bias: float
    sd: float
    rmse: float
    coverage95: float
    coverage90: float


@dataclass
class SimulationReport:
    S: int
    n: int
    class_cuts: list
    order: int
    seed: int
    used: int
    non_converged: int
    failed: int
    quantiles: list = field(default_factory=list)
    median_l1: float = float("nan")
    median_rimse: float = float("nan")
    median_kl: float = float("nan")
    replicates: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def run_replicate(seed_seq, n: int, class_cuts, order: int, config: FitConfig,
                  probs=DEFAULT_P, truth: MixtureTruth = TRUTH) -> dict:
    """Sample, tabulate, fit and score one replicate."""
    rng = np.random.default_rng(seed_seq)
    data = tabulate(sample_truth(n, rng, truth), class_cuts, order)
    result = fit(data, config)
    fitted = FittedDensity.from_fit(result)
    rows = []
    for p in probs:
        est95 = quantile_credible_interval(p, 0.05, fitted, result.info)
        half90 = stats.norm.ppf(0.95) * est95.s_q
        rows.append((est95.q_hat, est95.s_q, est95.ci_lower, est95.ci_upper,
                     est95.q_hat - half90, est95.q_hat + half90))
    metrics = compare_densities(
        truth.pdf, lambda x: density_at(x, fitted),
        truth.quantile, lambda p: quantile(p, fitted),
        truth.lower, truth.upper,
    )
    return {
        "converged": bool(result.converged),
        "edf": result.edf,
        "lam": result.lam,
        "estimates": rows,
        "l1": metrics.l1_quantile,
        "rimse": metrics.rimse,
        "kl": metrics.kl,
    }


def _worker(args):
    seed_seq, n, cuts, order, config, probs = args
    try:
        return run_replicate(seed_seq, n, cuts, order, config, probs)
    except Exception as exc:  # a failed replicate is reported, not fatal
        log.warning("replicate failed: %s", exc)
        return {"error": repr(exc)}


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def summarize(records: list, probs, truth: MixtureTruth = TRUTH) -> tuple[list, dict]:
    """Aggregate converged replicates into per-quantile summaries."""
    est = np.array([r["estimates"] for r in records])  # (S, P, 6)
    out = []
    for i, p in enumerate(probs):
        qt = truth.quantile(p)
        q = est[:, i, 0]
        bias = float(q.mean() - qt)
        sd = float(q.std())
        out.append(QuantileSummary(
            p=float(p), true=qt, mean=float(q.mean()), bias=bias, sd=sd,
            rmse=float(np.sqrt(np.mean((q - qt) ** 2))),
            coverage95=float(np.mean((est[:, i, 2] <= qt) & (qt <= est[:, i, 3]))),
            coverage90=float(np.mean((est[:, i, 4] <= qt) & (qt <= est[:, i, 5]))),
        ))
    med = {key: float(np.median([r[key] for r in records])) for key in ("l1", "rimse", "kl")}
    return out, med


def run_study(S: int, n: int, class_cuts=CUTS_J3, order: int = 4, seed: int = 0,
              config: FitConfig = FitConfig(), probs=DEFAULT_P, workers: int | None = None,
              keep_replicates: bool = False) -> SimulationReport:
    """Repeat sample/tabulate/fit ``S`` times and summarize quantile accuracy.

    Failed and non-converged replicates are counted and left out of every
    aggregate.
    """
    if S < 1:
        raise ValueError("S must be at least 1")
    seeds = np.random.SeedSequence(seed).spawn(S)
    jobs = [(s, n, tuple(class_cuts), order, config, tuple(probs)) for s in seeds]
    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_worker, jobs))
    else:
        records = [_worker(job) for job in jobs]
    failed = sum("error" in r for r in records)
    good = [r for r in records if "error" not in r and r["converged"]]
    non_conv = S - failed - len(good)
    report = SimulationReport(S=S, n=n, class_cuts=[float(c) for c in class_cuts],
                              order=order, seed=seed, used=len(good),
                              non_converged=non_conv, failed=failed)
    if good:
        summaries, med = summarize(good, probs)
        report.quantiles = [asdict(s) for s in summaries]
        report.median_l1, report.median_rimse, report.median_kl = (
            med["l1"], med["rimse"], med["kl"])
    if keep_replicates:
        report.replicates = records
    return report
