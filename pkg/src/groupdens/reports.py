"""Fit reports, simulation reports and plot data.

Reports are JSON documents.  Everything except the ``timings`` key is a
deterministic function of the input data and the configuration, so two runs
with the same inputs produce identical report bodies.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np

from .evaluation import moment_diagnostics
from .risk_inference import FittedDensity, density_at, quantile_credible_interval
from .table_io import SummaryTable

REPORT_VERSION = 1
CURVE_POINTS = 1001


def write_text_atomic(path, text: str) -> None:
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json_atomic(path, doc) -> None:
    write_text_atomic(path, dump_json(doc))


def _finite(x) -> float | None:
    x = float(x)
    return x if np.isfinite(x) else None


def density_curve(fitted: FittedDensity, points: int = CURVE_POINTS) -> dict:
    """Fitted density on an equidistant grid spanning the support."""
    x = np.linspace(fitted.grid.a0, fitted.grid.aJ, points)
    return {"x": x.tolist(), "density": density_at(x, fitted).tolist()}


def quantile_table(fit, fitted: FittedDensity, probs, alpha: float,
                   back_transform: str = "none") -> list:
    rows = []
    for p in probs:
        est = quantile_credible_interval(float(p), alpha, fitted, fit.info)
        row = {"p": est.p, "value_at_risk_level": 1.0 - est.p, "estimate": est.q_hat,
               "sd": est.s_q, "lower": est.ci_lower, "upper": est.ci_upper,
               "alpha": est.alpha, "ridged": est.ridged}
        if back_transform == "exp10":
            bt = est.back_transformed(10.0)
            row.update(back_transformed={"estimate": bt.q_hat, "lower": bt.ci_lower,
                                         "upper": bt.ci_upper})
        rows.append(row)
    return rows


def build_fit_report(fit, *, options: dict, probs=(), alpha: float = 0.05,
                     back_transform: str = "none", timings: dict | None = None) -> dict:
    """Assemble the JSON document describing a fit.

    ``options`` is echoed verbatim (command-line settings such as the data
    path); together with the fit configuration it regenerates the report.
    """
    setup = fit.setup
    fitted = FittedDensity.from_fit(fit)
    table = SummaryTable.from_dataset(setup.dataset)
    report = {
        "kind": "fit_report",
        "report_version": REPORT_VERSION,
        "config": {"fit": asdict(fit.config), "options": options,
                   "bins": setup.grid.I, "alpha": alpha, "back_transform": back_transform},
        "data": {
            "transform": setup.dataset.transform,
            "order": setup.dataset.order,
            "n": setup.dataset.n,
            "classes": [{k: v for k, v in asdict(r).items()} for r in table.records],
        },
        "fit": {
            "converged": bool(fit.converged),
            "theta": fit.theta.tolist(),
            "pivot": fit.pivot,
            "lambda": fit.lam,
            "edf": fit.edf,
            "em_iterations": fit.em_iters,
            "newton_iterations": fit.newton_iters,
            "penalized_loglik": _finite(fit.loglik_trace[-1]) if fit.loglik_trace else None,
        },
        "density_curve": density_curve(fitted),
        "moment_diagnostics": [asdict(d) for d in moment_diagnostics(fit)],
        "trace": {"penalized_loglik": [_finite(v) for v in fit.loglik_trace],
                  "lambda": [float(v) for v in fit.lambda_trace]},
        "timings": dict(timings or {}),
    }
    if len(probs):
        report["quantiles"] = quantile_table(fit, fitted, probs, alpha, back_transform)
    return report


def report_body(report: dict) -> dict:
    """Report without the run-dependent ``timings`` entry."""
    return {k: v for k, v in report.items() if k != "timings"}


def load_schema(name: str) -> dict:
    text = resources.files("groupdens").joinpath("schemas", name).read_text(encoding="utf-8")
    return json.loads(text)


def validate_report(doc: dict) -> None:
    """Validate a fit or simulation report against its published schema."""
    import jsonschema

    name = {"fit_report": "fit_report.schema.json",
            "simulation_report": "simulation_report.schema.json"}.get(doc.get("kind"))
    if name is None:
        raise ValueError(f"unknown report kind {doc.get('kind')!r}")
    jsonschema.validate(doc, load_schema(name))


def simulation_report_document(report, config, *, workers: int, timings: dict | None = None
                               ) -> dict:
    doc = report.to_dict()
    doc.update(kind="simulation_report", report_version=REPORT_VERSION,
               config={"fit": asdict(config), "workers": workers},
               timings=dict(timings or {}))
    for key in ("median_l1", "median_rimse", "median_kl"):
        doc[key] = _finite(doc[key])
    return doc


def histogram_rectangles(report: dict) -> list:
    """Class rectangles whose heights ``n_j / (n * width)`` integrate to 1."""
    classes = report["data"]["classes"]
    n = sum(c["freq"] for c in classes)
    return [{"class": j + 1, "lower": c["lower"], "upper": c["upper"], "freq": c["freq"],
             "height": c["freq"] / (n * (c["upper"] - c["lower"]))}
            for j, c in enumerate(classes)]


def emit_plot_data(report: dict, out_dir, *, svg: bool = False) -> dict:
    """Write ``histogram.csv``, ``curve.csv`` and optionally ``plot.svg``.

    Returns the paths written, keyed by kind.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create plot directory {out}: {exc}") from exc
    rects = histogram_rectangles(report)
    lines = ["class,lower,upper,freq,height"]
    lines += [f"{r['class']},{r['lower']!r},{r['upper']!r},{r['freq']},{r['height']!r}"
              for r in rects]
    paths = {"histogram": out / "histogram.csv", "curve": out / "curve.csv"}
    write_text_atomic(paths["histogram"], "\n".join(lines) + "\n")
    curve = report["density_curve"]
    rows = ["x,density"] + [f"{x!r},{f!r}" for x, f in zip(curve["x"], curve["density"])]
    write_text_atomic(paths["curve"], "\n".join(rows) + "\n")
    if svg:
        paths["svg"] = out / "plot.svg"
        _render_svg(rects, curve, paths["svg"], report["data"].get("transform", "none"))
    return paths


def _render_svg(rects, curve, path: Path, transform: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    for r in rects:
        ax.bar(r["lower"], r["height"], width=r["upper"] - r["lower"], align="edge",
               color="0.85", edgecolor="0.4")
    ax.plot(curve["x"], curve["density"], color="C0", lw=2, label="fitted density")
    ax.set_xlabel("log10 value" if transform == "log10" else "value")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".svg")
    os.close(fd)
    try:
        # fixed metadata keeps the file byte-stable across runs
        fig.savefig(tmp, format="svg", metadata={"Date": None})
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)
