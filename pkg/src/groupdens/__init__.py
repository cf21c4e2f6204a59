"""Smooth density, quantile and Value-at-Risk estimation from grouped data.

The input is a set of contiguous classes with their frequencies and,
optionally, the class means, standard deviations, skewness and excess
kurtosis.  The density is modelled with a penalized cubic B-spline
log-density on a fine grid and fitted by EM with Newton M-steps.
"""

from .dataset import DatasetError, GroupedDataset
from .density_model import (
    ClassMoments,
    class_central_moments,
    convert_summary_to_central_moments,
    moment_covariance,
    moment_derivatives,
)
from .em_fitter import FitConfig, FitResult, fit
from .evaluation import compare_densities, moment_diagnostics
from .grid_basis import build_basis, build_fine_grid, build_penalty
from .risk_inference import (
    FittedDensity,
    QuantileEstimate,
    cdf_at,
    density_at,
    information_matrix,
    quantile,
    quantile_credible_interval,
    value_at_risk,
)
from .sim_harness import MixtureTruth, run_study, sample_truth, tabulate, true_quantile
from .table_io import (
    SummaryRecord,
    SummaryTable,
    TableValidationError,
    parse_summary_table,
    read_summary_table,
    write_summary_table,
)

__version__ = "0.1.0"

__all__ = [
    "ClassMoments", "DatasetError", "FitConfig", "FitResult", "FittedDensity", "GroupedDataset",
    "MixtureTruth", "QuantileEstimate", "SummaryRecord", "SummaryTable", "TableValidationError",
    "build_basis", "build_fine_grid", "build_penalty", "cdf_at", "class_central_moments",
    "compare_densities", "convert_summary_to_central_moments", "density_at", "fit",
    "information_matrix", "moment_covariance", "moment_derivatives", "moment_diagnostics",
    "parse_summary_table", "quantile", "quantile_credible_interval", "read_summary_table",
    "run_study", "sample_truth", "tabulate", "true_quantile", "value_at_risk",
    "write_summary_table",
]
